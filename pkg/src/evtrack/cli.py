"""Command-line pipeline orchestration.

Subcommands chain the stages synth -> frame -> augment -> train -> qat ->
quantize -> eval -> plan -> export -> estimate; ``all`` runs them in
order.  Every stage is deterministic under the config seed and writes its
outputs (plus a ``.prov`` provenance sidecar) into the config's workdir.

Exit codes: 0 ok, 2 config error, 3 data error, 4 capacity/infeasibility,
5 internal invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import augment as aug
from . import deploy, evaluation, events, framing, network, predictors, quantize
from .config import load_config, write_provenance
from .errors import (CapacityError, ConfigError, DataError, EvtrackError,
                     InvariantError)

EXIT_CODES = [
    (ConfigError, 2),
    (CapacityError, 4),
    (InvariantError, 5),
    (DataError, 3),
]


def _workdir(cfg) -> Path:
    p = Path(cfg["workdir"])
    p.mkdir(parents=True, exist_ok=True)
    return p


def _spec(cfg) -> network.NetworkSpec:
    return network.canonical_spec(cfg["network"]["head"], cfg["network"]["fc1"])


def _user_paths(cfg, uid):
    wd = _workdir(cfg)
    return {
        "events": wd / f"events_user{uid}.evt",
        "labels": wd / f"labels_user{uid}.csv",
        "frames": wd / f"frames_user{uid}.frm",
        "samples": wd / f"samples_user{uid}.csv",
        "aug_frames": wd / f"aug_frames_user{uid}.frm",
        "aug_samples": wd / f"aug_samples_user{uid}.csv",
    }


def cmd_synth(cfg) -> None:
    base = dict(cfg["synth"]["params"])
    for user in cfg["synth"]["users"]:
        uid = user["id"]
        overrides = {k: v for k, v in user.items() if k not in ("id", "seed")}
        params = events.SynthParams(**{**base, **overrides})
        seed = int(user.get("seed", cfg["seed"] ^ uid))
        stream, track = events.synth_eye_sequence(params, seed)
        paths = _user_paths(cfg, uid)
        events.write_events(stream, paths["events"], "binary")
        events.write_labels(track, paths["labels"])
        write_provenance(paths["events"], cfg)
        write_provenance(paths["labels"], cfg)
        print(f"synth user {uid}: {len(stream)} events, {len(track)} labels")


def cmd_frame(cfg) -> None:
    fr = cfg["framing"]
    for user in cfg["synth"]["users"]:
        uid = user["id"]
        paths = _user_paths(cfg, uid)
        stream = events.read_events(paths["events"], "binary")
        track = events.read_labels(paths["labels"])
        frames = framing.accumulate_frames(stream, fr["window_us"], fr["min_events"])
        if not frames:
            raise DataError(f"user {uid}: no frames above the event threshold")
        roi = framing.compute_user_roi(frames, fr["coverage"])
        cropped = [framing.align_and_crop(f, roi) for f in frames]
        samples = framing.attach_labels(cropped, track, roi)
        framing.write_frames(cropped, paths["frames"])
        framing.write_samples_csv(samples, paths["samples"])
        write_provenance(paths["frames"], cfg)
        write_provenance(paths["samples"], cfg)
        print(f"frame user {uid}: {len(frames)} frames, roi=({roi.x0},{roi.y0})")


def cmd_augment(cfg) -> None:
    if not cfg["augment"]["enable"]:
        print("augment: disabled in config")
        return
    plan = aug.AugmentPlan(cfg["augment"]["seed"], cfg["augment"]["shift_range"])
    for uid in cfg["split"]["train"]:
        paths = _user_paths(cfg, uid)
        if not paths["frames"].exists():
            continue
        frames = framing.read_frames(paths["frames"])
        samples = framing.read_samples_csv(frames, paths["samples"])
        augmented = aug.augment_dataset(samples, plan)
        framing.write_frames([s.frame for s in augmented], paths["aug_frames"])
        framing.write_samples_csv(augmented, paths["aug_samples"])
        write_provenance(paths["aug_frames"], cfg)
        write_provenance(paths["aug_samples"], cfg)
        print(f"augment user {uid}: {len(samples)} -> {len(augmented)} samples")


def _load_dataset(cfg, user_ids, dtype=np.float32):
    """Assemble (X, targets, users, samples) for the given users.

    Labels stay in ROI pixel coordinates (157x90); frames are downsampled
    to the network input geometry.  Regression drops invisible samples.
    """
    spec = _spec(cfg)
    factor = cfg["framing"]["downsample"]
    grid = spec.grid
    head = spec.head
    xs, targets, users, kept_samples = [], [], [], []
    for uid in user_ids:
        paths = _user_paths(cfg, uid)
        use_aug = (cfg["augment"]["enable"] and uid in cfg["split"]["train"]
                   and paths["aug_frames"].exists())
        fkey, skey = ("aug_frames", "aug_samples") if use_aug else ("frames", "samples")
        if not paths[fkey].exists():
            raise DataError(f"missing frames for user {uid}: {paths[fkey]}")
        frames = framing.read_frames(paths[fkey])
        samples = framing.read_samples_csv(frames, paths[skey])
        for s in samples:
            if head == "regression" and not s.visible:
                continue
            small = framing.downsample(s.frame, factor)
            xs.append(small.cells[None])
            kept_samples.append(framing.Sample(small, s.x, s.y, s.visible))
            users.append(uid)
            if head == "regression":
                targets.append([s.x / grid.roi_width, s.y / grid.roi_height])
            else:
                targets.append(network.label_to_cell(s.x, s.y, s.visible, grid))
    if not xs:
        raise DataError(f"no samples for users {list(user_ids)}")
    X = np.stack(xs).astype(dtype)
    t_dtype = np.float32 if head == "regression" else np.int64
    return (X, np.asarray(targets, dtype=t_dtype),
            np.asarray(users, dtype=np.int64), kept_samples)


def cmd_train(cfg) -> None:
    spec = _spec(cfg)
    wd = _workdir(cfg)
    split = cfg["split"]
    X, targets, users, _ = _load_dataset(cfg, split["train"] + split["val"])
    config = network.TrainConfig(epochs=cfg["train"]["epochs"],
                                 batch=cfg["train"]["batch"],
                                 lr=cfg["train"]["lr"], seed=cfg["seed"],
                                 train_users=tuple(split["train"]),
                                 val_users=tuple(split["val"]))
    weights, log = network.train(spec, network.TrainData(X, targets, users), config)
    network.save_checkpoint(spec, weights, wd / "model.eetf")
    with open(wd / "train_log.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss", "batch_users"])
        for entry in log:
            writer.writerow([entry["epoch"], f"{entry['train_loss']:.6f}",
                             f"{entry.get('val_loss', float('nan')):.6f}",
                             " ".join(map(str, entry["batch_users"]))])
    write_provenance(wd / "model.eetf", cfg)
    write_provenance(wd / "train_log.csv", cfg)
    print(f"train: final loss {log[-1]['train_loss']:.6f}"
          + (f", val {log[-1]['val_loss']:.6f}" if "val_loss" in log[-1] else ""))


def cmd_qat(cfg) -> None:
    spec = _spec(cfg)
    wd = _workdir(cfg)
    split = cfg["split"]
    preset = quantize.get_preset(cfg["qat"]["preset"])
    X, targets, users, _ = _load_dataset(cfg, split["train"] + split["val"],
                                         dtype=np.float64)
    init = None
    if (wd / "model.eetf").exists():
        _, init = network.load_checkpoint(wd / "model.eetf", dtype=np.float64)
    config = network.TrainConfig(epochs=cfg["qat"]["epochs"],
                                 batch=cfg["train"]["batch"],
                                 lr=cfg["train"]["lr"], seed=cfg["seed"],
                                 train_users=tuple(split["train"]),
                                 val_users=tuple(split["val"]))
    fq_weights, qparams, log = quantize.qat_train(
        spec, network.TrainData(X, targets, users), preset, config,
        init=init, calib_size=cfg["qat"]["calib_size"],
        z_max=cfg["qat"]["z_max"])
    network.save_checkpoint(spec, fq_weights, wd / "model_qat.eetf")
    quantize.save_qparams(qparams, wd / "qparams.json")
    write_provenance(wd / "model_qat.eetf", cfg)
    write_provenance(wd / "qparams.json", cfg)
    print(f"qat[{preset.name}]: final loss {log[-1]['train_loss']:.6f}"
          if log else f"qat[{preset.name}]: projected without training")


def cmd_quantize(cfg) -> None:
    wd = _workdir(cfg)
    spec, weights = network.load_checkpoint(wd / "model_qat.eetf", dtype=np.float64)
    qparams, input_exponent = quantize.load_qparams(wd / "qparams.json")
    projected = quantize.project_weights(spec, weights, qparams, input_exponent)
    model = quantize.lower(spec, projected, qparams, input_exponent)
    quantize.save_integer_model(model, wd / "model.eetq")
    write_provenance(wd / "model.eetq", cfg)
    total, _ = quantize.weight_size_bytes(spec, quantize.get_preset(cfg["qat"]["preset"]))
    print(f"quantize: wrote integer model ({total} weight bytes)")


def cmd_eval(cfg, mode: str | None = None) -> None:
    spec = _spec(cfg)
    wd = _workdir(cfg)
    mode = mode or cfg["eval"]["mode"]
    _, _, _, samples = _load_dataset(cfg, cfg["split"]["test"])
    if mode == "float":
        _, weights = network.load_checkpoint(wd / "model.eetf")
        predict = predictors.float_predictor(spec, weights)
    elif mode == "float-fakequant":
        _, weights = network.load_checkpoint(wd / "model_qat.eetf", dtype=np.float64)
        qparams, input_exponent = quantize.load_qparams(wd / "qparams.json")
        predict = predictors.fakequant_predictor(spec, weights, qparams, input_exponent)
    elif mode == "integer":
        model = quantize.load_integer_model(wd / "model.eetq")
        predict = predictors.integer_predictor(model)
    else:
        raise ConfigError(f"unknown eval mode {mode!r}")
    preset = quantize.get_preset(cfg["qat"]["preset"])
    weight_bytes, _ = quantize.weight_size_bytes(spec, preset)
    kind = spec.head
    report = evaluation.evaluate(samples, predict, kind=kind, grid=spec.grid,
                                 deg_per_px=cfg["eval"]["deg_per_px"],
                                 label_scale=1.0, weight_bytes=weight_bytes)
    evaluation.write_report_csv(report, wd / "report.csv")
    evaluation.write_report_summary(report, wd / "report.txt")
    evaluation.emit_heatmap(samples, wd / "heatmap.csv")
    for name in ("report.csv", "report.txt", "heatmap.csv"):
        write_provenance(wd / name, cfg)
    print(f"eval[{mode}]: mean pixel distance "
          f"{report.mean_pixel_distance_px:.3f} px over {report.n_scored} samples")


def cmd_plan(cfg) -> None:
    spec = _spec(cfg)
    wd = _workdir(cfg)
    profile = deploy.builtin_profile(cfg["deploy"]["profile"])
    buffers = deploy.lifetimes(spec)
    pmap = deploy.map_processors(spec, profile)
    plan = deploy.plan_memory(buffers, profile, pmap)
    with open(wd / "plan.txt", "w", encoding="utf-8") as fh:
        for buf in buffers:
            fh.write(f"buffer.{buf.name}.offset={plan.offsets[buf.name]}\n")
            fh.write(f"buffer.{buf.name}.size={buf.size}\n")
        fh.write(f"plan.peak_bytes={plan.peak_bytes}\n")
        for step in sorted(pmap):
            lo, hi = pmap[step]
            fh.write(f"plan.processor_map.{step}={lo}-{hi}\n")
    write_provenance(wd / "plan.txt", cfg)
    print(f"plan: peak {plan.peak_bytes} bytes "
          f"(data memory {profile.data_memory_bytes})")


def cmd_export(cfg) -> None:
    wd = _workdir(cfg)
    model = quantize.load_integer_model(wd / "model.eetq")
    profile = deploy.builtin_profile(cfg["deploy"]["profile"])
    pmap = deploy.map_processors(model.spec, profile)
    plan = deploy.plan_memory(deploy.lifetimes(model.spec), profile, pmap)
    deploy.export_description(model, plan, wd / "model_desc.txt")
    write_provenance(wd / "model_desc.txt", cfg)
    print(f"export: wrote {wd / 'model_desc.txt'}")


def cmd_estimate(cfg) -> None:
    spec = _spec(cfg)
    wd = _workdir(cfg)
    preset = quantize.get_preset(cfg["qat"]["preset"])
    profile = deploy.builtin_profile(cfg["deploy"]["profile"])
    est = deploy.estimate(spec, preset, profile)
    with open(wd / "estimate.txt", "w", encoding="utf-8") as fh:
        fh.write("status=model-estimate\n")
        fh.write(f"profile={profile.name}\n")
        fh.write(f"preset={preset.name}\n")
        fh.write(f"latency_ms={est.latency_ms:.4f}\n")
        fh.write(f"energy_uj={est.energy_uj:.4f}\n")
        fh.write(f"weight_bytes={est.weight_bytes}\n")
        fh.write(f"peak_bytes={est.peak_bytes}\n")
        fh.write(f"fits={int(est.fits)}\n")
    write_provenance(wd / "estimate.txt", cfg)
    print(f"estimate [{profile.name}, {preset.name}] (model estimate, not a "
          f"measurement): latency {est.latency_ms:.3f} ms, "
          f"energy {est.energy_uj:.1f} uJ, weights {est.weight_bytes} B, "
          f"fits={est.fits}")


def cmd_presets() -> None:
    for name in quantize.preset_list():
        p = quantize.PRESETS[name]
        print(f"{name}: head={p.head} conv_bits={p.conv_bits} fc_bits={p.fc_bits}")


def cmd_all(cfg) -> None:
    cmd_synth(cfg)
    cmd_frame(cfg)
    cmd_augment(cfg)
    cmd_train(cfg)
    cmd_qat(cfg)
    cmd_quantize(cfg)
    cmd_eval(cfg)
    cmd_plan(cfg)
    cmd_export(cfg)
    cmd_estimate(cfg)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evtrack",
        description="Event-camera pupil tracking pipeline: synthesis, "
                    "framing, training, quantization, deployment planning.")
    sub = parser.add_subparsers(dest="command", required=True)
    needs_config = ["synth", "frame", "augment", "train", "qat", "quantize",
                    "eval", "plan", "export", "estimate", "all"]
    for name in needs_config:
        p = sub.add_parser(name)
        p.add_argument("--config", "-c", required=True, help="pipeline YAML config")
        if name == "eval":
            p.add_argument("--mode", choices=["float", "float-fakequant", "integer"],
                           help="override eval.mode from the config")
    sub.add_parser("presets", help="list the quantization preset registry")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "presets":
            cmd_presets()
            return 0
        cfg = load_config(args.config)
        if args.command == "synth":
            cmd_synth(cfg)
        elif args.command == "frame":
            cmd_frame(cfg)
        elif args.command == "augment":
            cmd_augment(cfg)
        elif args.command == "train":
            cmd_train(cfg)
        elif args.command == "qat":
            cmd_qat(cfg)
        elif args.command == "quantize":
            cmd_quantize(cfg)
        elif args.command == "eval":
            cmd_eval(cfg, getattr(args, "mode", None))
        elif args.command == "plan":
            cmd_plan(cfg)
        elif args.command == "export":
            cmd_export(cfg)
        elif args.command == "estimate":
            cmd_estimate(cfg)
        elif args.command == "all":
            cmd_all(cfg)
        return 0
    except EvtrackError as exc:
        for klass, code in EXIT_CODES:
            if isinstance(exc, klass):
                print(f"error[{type(exc).__name__}]: {exc}", file=sys.stderr)
                return code
        print(f"error[{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
