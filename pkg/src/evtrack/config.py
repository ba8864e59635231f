"""Pipeline configuration: YAML file with defaults, validation, hashing.

Every subcommand reads the same config; artifacts carry a ``.prov``
sidecar recording the config hash and seed so experiment outputs stay
auditable and reproducible.
"""

from __future__ import annotations

import copy
import hashlib

import yaml

from .errors import ConfigError

DEFAULTS = {
    "seed": 0,
    "workdir": "out",
    "synth": {
        "users": [{"id": 0, "seed": 0}],
        "params": {},
    },
    "framing": {
        "window_us": 5000,
        "min_events": 150,
        "coverage": 0.95,
        "downsample": 2,
    },
    "augment": {
        "enable": False,
        "seed": 7,
        "shift_range": 30,
    },
    "network": {
        "head": "regression",
        "fc1": 64,
    },
    "train": {
        "epochs": 200,
        "batch": 200,
        "lr": 1.0e-3,
    },
    "split": {
        "train": [10, 18, 20],
        "val": [19],
        "test": [5, 15],
    },
    "qat": {
        "preset": "R8",
        "epochs": 3,
        "calib_size": 256,
        "z_max": 3.0,
    },
    "eval": {
        "mode": "float-fakequant",
        "deg_per_px": 0.76,
    },
    "deploy": {
        "profile": "max78000-like",
    },
}


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {path + key!r}")
        if isinstance(base[key], dict) and key not in ("params",):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {path + key!r} must be a mapping")
            out[key] = _merge(base[key], value, path + key + ".")
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh) or {}
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config root must be a mapping: {path}")
    cfg = _merge(DEFAULTS, raw)
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    split = cfg["split"]
    sets = [set(split[k]) for k in ("train", "val", "test")]
    for i in range(3):
        for j in range(i + 1, 3):
            if sets[i] & sets[j]:
                raise ConfigError(f"user splits overlap: {sorted(sets[i] & sets[j])}")
    if cfg["network"]["head"] not in ("regression", "classification"):
        raise ConfigError(f"unknown head {cfg['network']['head']!r}")
    if cfg["eval"]["mode"] not in ("float", "float-fakequant", "integer"):
        raise ConfigError(f"unknown eval mode {cfg['eval']['mode']!r}")
    ids = [u.get("id") for u in cfg["synth"]["users"]]
    if len(ids) != len(set(ids)):
        raise ConfigError("duplicate user ids in synth.users")


def config_hash(cfg: dict) -> str:
    blob = yaml.safe_dump(cfg, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def write_provenance(artifact_path, cfg: dict) -> None:
    with open(str(artifact_path) + ".prov", "w", encoding="utf-8") as fh:
        fh.write(f"config_hash={config_hash(cfg)}\n")
        fh.write(f"seed={cfg['seed']}\n")
