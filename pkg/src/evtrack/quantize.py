"""Quantization-aware training and pure-integer mixed-precision inference.

The pipeline has four stages: collect activation statistics on the
training data, derive per-layer activation thresholds after z-score
outlier rejection, turn thresholds and weight ranges into power-of-two
scale exponents and accumulator shifts, and fake-quantize weights and
activations during training (straight-through estimator on the backward
pass).  A converged fake-quantized model lowers exactly onto integer
weights; the integer inference path reproduces the fake-quantized float
path bit for bit.

Conventions fixed here so cross-path bit-exactness is achievable:
  - scales are powers of two with zero zero-point;
  - rounding is half-away-from-zero everywhere;
  - activations are 8-bit between layers, accumulators 32-bit;
  - 1-bit weights take values in {-1, 0} (a clamp of the 2-bit lattice).

Quantized model file: magic ``EETQ``, u32 JSON descriptor length, the
descriptor, then per parameterized layer u8 weight_bits, i8 scale
exponent, i8 output shift, u32 weight count, the weights bit-packed
little-endian LSB-first (two's complement at the layer's width, padded to
a byte), then the biases as little-endian i32.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, FormatError, InvariantError
from .network import (NetworkSpec, TrainConfig, TrainData, Adam, build_layers,
                      conv_forward, conv_backward, dense_forward, dense_backward,
                      pool_forward, pool_backward, relu_forward, param_counts,
                      spec_from_descriptor, _spec_descriptor, _batch_indices,
                      forward as float_forward, loss as head_loss)

ACT_BITS = 8
ACT_QMAX = 127
ACC_BITS = 32

# ---------------------------------------------------------------------------
# rounding and lattices


def round_half_away(v: np.ndarray) -> np.ndarray:
    return np.sign(v) * np.floor(np.abs(v) + 0.5)


def quant_range(bits: int) -> tuple[int, int]:
    if bits == 1:
        return -1, 0
    return -(1 << (bits - 1)), (1 << (bits - 1)) - 1


def quant_qmax(bits: int) -> int:
    # magnitude representable on the lattice; 1-bit carries only {-1, 0}
    return 1 if bits == 1 else (1 << (bits - 1)) - 1


def fake_quantize(values: np.ndarray, bits: int, scale_exponent: int) -> np.ndarray:
    """clamp(round_half_away(v / 2^e)) * 2^e on the given bit lattice."""
    if bits not in (1, 2, 4, 8, ACC_BITS):
        raise DataError(f"unsupported bit width {bits}")
    lo, hi = quant_range(bits)
    scale = 2.0 ** scale_exponent
    q = np.clip(round_half_away(np.asarray(values) / scale), lo, hi)
    return q * scale


def fake_quantize_with_mask(values, bits, scale_exponent):
    """fake_quantize plus the straight-through mask (1 inside clamp range)."""
    lo, hi = quant_range(bits)
    scale = 2.0 ** scale_exponent
    q = round_half_away(np.asarray(values) / scale)
    mask = (q >= lo) & (q <= hi)
    return np.clip(q, lo, hi) * scale, mask


# ---------------------------------------------------------------------------
# calibration statistics


@dataclass(frozen=True)
class LayerStats:
    """Mergeable summary of activation magnitudes for one layer.

    Keeps exact count/mean/M2 plus the top-k largest magnitudes, which is
    enough to evaluate the z-score threshold rule as long as fewer than k
    values sit above the accepted maximum.
    """

    count: int
    mean: float
    m2: float
    topk: np.ndarray   # sorted descending, len <= cap
    cap: int = 4096

    @property
    def std(self) -> float:
        return math.sqrt(self.m2 / self.count) if self.count else 0.0

    @property
    def raw_max(self) -> float:
        return float(self.topk[0]) if len(self.topk) else 0.0


def layer_stats(values: np.ndarray, cap: int = 4096) -> LayerStats:
    mags = np.abs(np.asarray(values, dtype=np.float64)).ravel()
    if mags.size == 0:
        raise DataError("empty observation set")
    mean = float(mags.mean())
    m2 = float(np.sum((mags - mean) ** 2))
    topk = np.sort(mags)[::-1][:cap].copy()
    return LayerStats(int(mags.size), mean, m2, topk, cap)


def merge_stats(a: LayerStats, b: LayerStats) -> LayerStats:
    if a.cap != b.cap:
        raise DataError("cannot merge stats with different caps")
    n = a.count + b.count
    delta = b.mean - a.mean
    mean = a.mean + delta * b.count / n
    m2 = a.m2 + b.m2 + delta * delta * a.count * b.count / n
    topk = np.sort(np.concatenate([a.topk, b.topk]))[::-1][:a.cap].copy()
    return LayerStats(n, mean, m2, topk, a.cap)


@dataclass
class CalibStats:
    layers: list  # LayerStats per quantizable layer, execution order


def merge_calib(a: CalibStats, b: CalibStats) -> CalibStats:
    return CalibStats([merge_stats(x, y) for x, y in zip(a.layers, b.layers)])


def collect_stats(spec: NetworkSpec, weights: list, calib_X: np.ndarray,
                  cap: int = 4096) -> CalibStats:
    """Per-layer stats over post-activation outputs on the calibration set."""
    if len(calib_X) == 0:
        raise DataError("empty calibration set")
    x = np.asarray(calib_X, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    layers = build_layers(spec)
    per_layer = []
    pending = None  # stats candidate awaiting a fused relu
    for i, layer in enumerate(layers):
        if layer.kind == "conv":
            x = conv_forward(x, *weights[i])
            pending = True
        elif layer.kind == "dense":
            x = dense_forward(x, *weights[i])
            pending = True
        elif layer.kind == "relu":
            x = relu_forward(x)
            if pending:
                per_layer.append(layer_stats(x, cap))
                pending = None
        elif layer.kind == "pool":
            x, _ = pool_forward(x)
        elif layer.kind == "flatten":
            x = x.reshape(x.shape[0], -1)
    if pending:  # final dense has no relu; its output is still quantized
        per_layer.append(layer_stats(x, cap))
    return CalibStats(per_layer)


def thresholds(stats: CalibStats, z_max: float = 3.0) -> list[float]:
    """Per-layer activation threshold: max magnitude with |z| <= z_max."""
    out = []
    for ls in stats.layers:
        if ls.std == 0.0:
            out.append(ls.raw_max)
            continue
        if math.isinf(z_max):
            out.append(ls.raw_max)
            continue
        z = np.abs(ls.topk - ls.mean) / ls.std
        accepted = ls.topk[z <= z_max]
        if len(accepted):
            out.append(float(accepted[0]))
        else:
            # every retained extreme is an outlier; bound by the z window
            out.append(ls.mean + z_max * ls.std)
    return out


# ---------------------------------------------------------------------------
# presets


@dataclass(frozen=True)
class QuantPreset:
    """Per-layer weight bit widths: six convolutions plus two dense layers."""

    name: str
    conv_bits: tuple
    fc_bits: tuple
    head: str

    def layer_bits(self, spec: NetworkSpec) -> tuple:
        n_param = len(param_counts(spec))
        bits = tuple(self.conv_bits) + tuple(self.fc_bits)
        if len(bits) != n_param:
            raise ConfigError(f"preset {self.name} covers {len(bits)} layers, "
                              f"spec has {n_param}")
        return bits


def _make_presets() -> dict:
    presets = {}
    for prefix, head in (("R", "regression"), ("C", "classification")):
        variants = {
            "4": ((4,) * 6, (8, 8)),
            "8": ((8,) * 6, (8, 8)),
            "All4": ((4,) * 6, (4, 4)),
            "2248": ((2, 2, 4, 4, 4, 4), (8, 8)),
            "1248": ((1, 2, 4, 4, 4, 4), (8, 8)),
        }
        for suffix, (conv_bits, fc_bits) in variants.items():
            name = prefix + suffix
            presets[name] = QuantPreset(name, conv_bits, fc_bits, head)
    return presets


PRESETS = _make_presets()


def preset_list() -> list[str]:
    return list(PRESETS)


def get_preset(name: str) -> QuantPreset:
    if name in PRESETS:
        return PRESETS[name]
    import difflib
    close = difflib.get_close_matches(name, PRESETS, n=1)
    hint = f"; did you mean {close[0]!r}?" if close else ""
    raise ConfigError(f"unknown preset {name!r}{hint}")


# ---------------------------------------------------------------------------
# scale exponents


@dataclass(frozen=True)
class LayerQuantParams:
    weight_bits: int
    weight_scale_exponent: int
    activation_exponent: int      # scale of this layer's quantized output
    output_shift: int             # right-shift applied to the accumulator
    activation_bits: int = ACT_BITS


def _exponent_for(value: float, qmax: int) -> int:
    """Smallest e with qmax * 2^e >= value."""
    if value <= 0:
        raise DataError("non-positive threshold")
    e = math.ceil(math.log2(value / qmax))
    while qmax * 2.0 ** e < value:
        e += 1
    while qmax * 2.0 ** (e - 1) >= value:
        e -= 1
    return e


def scale_exponents(layer_thresholds: list[float], spec: NetworkSpec,
                    weights: list, preset: QuantPreset,
                    input_exponent: int = 0) -> list[LayerQuantParams]:
    """Turn thresholds and weight ranges into per-layer quant parameters.

    The accumulator carries scale 2^(e_in + e_w); the output shift maps it
    onto the layer's activation exponent.
    """
    bits = preset.layer_bits(spec)
    pidx = [i for i, l in enumerate(build_layers(spec)) if l.kind in ("conv", "dense")]
    if len(layer_thresholds) != len(pidx):
        raise DataError("one threshold per parameterized layer required")
    params = []
    e_in = input_exponent
    for q, i in enumerate(pidx):
        w_max = float(np.max(np.abs(weights[i][0]))) if weights[i][0].size else 0.0
        e_w = _exponent_for(w_max, quant_qmax(bits[q])) if w_max > 0 else 0
        e_a = _exponent_for(float(layer_thresholds[q]), ACT_QMAX)
        shift = e_a - e_in - e_w
        params.append(LayerQuantParams(bits[q], e_w, e_a, shift))
        e_in = e_a
    return params


# ---------------------------------------------------------------------------
# fake-quantized forward/backward


def _quantize_activation(v: np.ndarray, e: int, lo: int):
    """Returns (codes, fq value, STE mask); hi is the int8 max."""
    scale = 2.0 ** e
    q = round_half_away(v / scale)
    mask = (q >= lo) & (q <= ACT_QMAX)
    codes = np.clip(q, lo, ACT_QMAX)
    return codes, codes * scale, mask


def fq_forward(spec: NetworkSpec, weights: list, qparams: list,
               x_codes: np.ndarray, input_exponent: int = 0,
               want_cache: bool = False, collect_codes: bool = False):
    """Fake-quantized float forward in float64.

    ``x_codes`` are int8 input codes at 2^input_exponent.  Returns
    (output_value, extras) where extras carries the backward cache and/or
    the per-layer quantized activation codes.
    """
    layers = build_layers(spec)
    x = np.asarray(x_codes, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    x = x * 2.0 ** input_exponent
    cache = [] if want_cache else None
    codes_out = [] if collect_codes else None
    q = 0
    e_in = input_exponent
    pending = None  # (LayerQuantParams,) for the act quant after fused relu
    for i, layer in enumerate(layers):
        if layer.kind in ("conv", "dense"):
            lp = qparams[q]
            W, b = weights[i]
            w_fq, w_mask = fake_quantize_with_mask(W, lp.weight_bits,
                                                   lp.weight_scale_exponent)
            e_b = e_in + lp.weight_scale_exponent
            b_fq, b_mask = fake_quantize_with_mask(b, ACC_BITS, e_b)
            if want_cache:
                cache.append((layer.kind, (x, w_fq, w_mask, b_mask)))
            if layer.kind == "conv":
                x = conv_forward(x, w_fq, b_fq)
            else:
                x = dense_forward(x, w_fq, b_fq)
            pending = lp
            q += 1
            # the final dense has no relu: quantize its output here
            if i == len(layers) - 1:
                codes, x, mask = _quantize_activation(x, lp.activation_exponent, -128)
                if want_cache:
                    cache.append(("outquant", mask))
                if collect_codes:
                    codes_out.append(codes.astype(np.int32))
                e_in = lp.activation_exponent
        elif layer.kind == "relu":
            pre = x
            x = relu_forward(x)
            lp = pending
            codes, x, mask = _quantize_activation(x, lp.activation_exponent, 0)
            if want_cache:
                cache.append(("relu", (pre, mask)))
            if collect_codes:
                codes_out.append(codes.astype(np.int32))
            e_in = lp.activation_exponent
            pending = None
        elif layer.kind == "pool":
            y, idx = pool_forward(x)
            if want_cache:
                cache.append(("pool", (idx, x.shape)))
            x = y
        elif layer.kind == "flatten":
            if want_cache:
                cache.append(("flatten", x.shape))
            x = x.reshape(x.shape[0], -1)
    return x, {"cache": cache, "codes": codes_out}


def fq_backward(spec: NetworkSpec, cache: list, output_grad: np.ndarray) -> list:
    """Backward through the fake-quantized graph with STE masks."""
    layers = build_layers(spec)
    grads = [None] * len(layers)
    dy = output_grad
    entries = list(cache)
    if entries and entries[-1][0] == "outquant":
        dy = dy * entries.pop()[1]
    if len(entries) != len(layers):
        raise DataError("fq cache does not match layer sequence")
    for i in range(len(layers) - 1, -1, -1):
        kind, saved = entries[i]
        if kind == "conv":
            x, w_fq, w_mask, b_mask = saved
            dy, dW, db = conv_backward(dy, x, w_fq)
            grads[i] = (dW * w_mask, db * b_mask)
        elif kind == "dense":
            x, w_fq, w_mask, b_mask = saved
            dy, dW, db = dense_backward(dy, x, w_fq)
            grads[i] = (dW * w_mask, db * b_mask)
        elif kind == "relu":
            pre, act_mask = saved
            dy = dy * act_mask * (pre > 0)
        elif kind == "pool":
            idx, in_shape = saved
            dy = pool_backward(dy, idx, in_shape)
        elif kind == "flatten":
            dy = dy.reshape(saved)
    return grads


def project_weights(spec: NetworkSpec, weights: list, qparams: list,
                    input_exponent: int = 0) -> list:
    """Snap weights and biases onto their quantization lattices."""
    layers = build_layers(spec)
    out = []
    q = 0
    e_in = input_exponent
    for i, layer in enumerate(layers):
        if layer.kind in ("conv", "dense"):
            lp = qparams[q]
            W, b = weights[i]
            e_b = e_in + lp.weight_scale_exponent
            out.append((fake_quantize(np.asarray(W, dtype=np.float64),
                                      lp.weight_bits, lp.weight_scale_exponent),
                        fake_quantize(np.asarray(b, dtype=np.float64),
                                      ACC_BITS, e_b)))
            e_in = lp.activation_exponent
            q += 1
        else:
            out.append(None)
    return out


def qat_train(spec: NetworkSpec, data: TrainData, preset: QuantPreset,
              config: TrainConfig, init: list | None = None,
              calib_size: int = 256, z_max: float = 3.0,
              input_exponent: int = 0):
    """Quantization-aware training.

    Same loop as network.train, but every forward fake-quantizes weights
    per the preset and activations to 8 bits, with thresholds refreshed at
    every epoch start from a fixed calibration subset.  Returns the
    lattice-projected weights, the final quant parameters, and the log.
    """
    if preset.head != spec.head:
        raise ConfigError(f"preset {preset.name} targets head {preset.head!r}, "
                          f"spec has {spec.head!r}")
    if set(config.train_users) & set(config.val_users):
        raise DataError("train/validation user splits overlap")
    if config.train_users:
        train_idx = np.flatnonzero(np.isin(data.users, config.train_users))
    else:
        train_idx = np.arange(len(data.X))
    if len(train_idx) == 0:
        raise DataError("empty training split")
    calib_idx = train_idx[:calib_size]

    from .network import init_weights
    weights = [None if w is None else (np.asarray(w[0], dtype=np.float64).copy(),
                                       np.asarray(w[1], dtype=np.float64).copy())
               for w in (init if init is not None else init_weights(spec, config.seed))]
    opt = Adam(weights, config)
    rng = np.random.default_rng(config.seed)
    log = []
    qparams = None
    for epoch in range(config.epochs):
        stats = collect_stats(spec, weights, data.X[calib_idx])
        qparams = scale_exponents(thresholds(stats, z_max), spec, weights,
                                  preset, input_exponent)
        losses = []
        for batch_idx in _batch_indices(train_idx, config.batch, rng):
            out, extras = fq_forward(spec, weights, qparams,
                                     data.X[batch_idx], input_exponent,
                                     want_cache=True)
            value, grad = head_loss(spec.head, out, data.targets[batch_idx])
            grads = fq_backward(spec, extras["cache"], grad)
            opt.update(weights, grads)
            losses.append(value)
        log.append({"epoch": epoch, "train_loss": float(np.mean(losses))})
    if qparams is None:  # epochs == 0: still produce a consistent model
        stats = collect_stats(spec, weights, data.X[calib_idx])
        qparams = scale_exponents(thresholds(stats, z_max), spec, weights,
                                  preset, input_exponent)
    projected = project_weights(spec, weights, qparams, input_exponent)
    return projected, qparams, log


def save_qparams(qparams: list, path, input_exponent: int = 0) -> None:
    payload = {
        "input_exponent": input_exponent,
        "layers": [{"weight_bits": p.weight_bits,
                    "weight_scale_exponent": p.weight_scale_exponent,
                    "activation_exponent": p.activation_exponent,
                    "output_shift": p.output_shift} for p in qparams],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_qparams(path) -> tuple[list, int]:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    qparams = [LayerQuantParams(l["weight_bits"], l["weight_scale_exponent"],
                                l["activation_exponent"], l["output_shift"])
               for l in payload["layers"]]
    return qparams, payload["input_exponent"]


# ---------------------------------------------------------------------------
# lowering and integer inference


@dataclass(frozen=True)
class IntegerModel:
    spec: NetworkSpec
    params: list          # LayerQuantParams per parameterized layer
    weights: list         # (W int32 array, b int32 array) per parameterized layer
    input_exponent: int = 0


def lower(spec: NetworkSpec, fq_weights: list, qparams: list,
          input_exponent: int = 0) -> IntegerModel:
    """Extract exact integer weights from lattice-projected float weights."""
    layers = build_layers(spec)
    int_weights = []
    q = 0
    e_in = input_exponent
    for i, layer in enumerate(layers):
        if layer.kind not in ("conv", "dense"):
            continue
        lp = qparams[q]
        W, b = fq_weights[i]
        w_scaled = np.asarray(W, dtype=np.float64) / 2.0 ** lp.weight_scale_exponent
        w_int = round_half_away(w_scaled)
        if not np.allclose(w_scaled, w_int, atol=1e-9):
            raise InvariantError(f"layer {q}: weights off the quantization lattice")
        lo, hi = quant_range(lp.weight_bits)
        if w_int.min() < lo or w_int.max() > hi:
            raise InvariantError(f"layer {q}: weights outside {lp.weight_bits}-bit range")
        e_b = e_in + lp.weight_scale_exponent
        b_scaled = np.asarray(b, dtype=np.float64) / 2.0 ** e_b
        b_int = round_half_away(b_scaled)
        if not np.allclose(b_scaled, b_int, atol=1e-9):
            raise InvariantError(f"layer {q}: biases off the accumulator lattice")
        if np.any(np.abs(b_int) >= 2 ** 31):
            raise InvariantError(f"layer {q}: bias exceeds 32-bit range")
        int_weights.append((w_int.astype(np.int32), b_int.astype(np.int32)))
        e_in = lp.activation_exponent
        q += 1
    return IntegerModel(spec, list(qparams), int_weights, input_exponent)


def _shift_round(acc: np.ndarray, shift: int) -> np.ndarray:
    """Arithmetic shift with half-away-from-zero rounding (int64 domain)."""
    if shift < 0:
        return acc << (-shift)
    if shift == 0:
        return acc
    half = np.int64(1) << (shift - 1)
    mag = (np.abs(acc) + half) >> shift
    return np.sign(acc) * mag


def int_forward(model: IntegerModel, x_codes: np.ndarray,
                collect_codes: bool = False):
    """Pure-integer inference on int8 input codes.

    Returns (output codes, dequantized view[, per-layer codes]).
    Accumulators are checked against the 32-bit range.
    """
    layers = build_layers(model.spec)
    x = np.asarray(x_codes, dtype=np.int64)
    if x.ndim == 3:
        x = x[None]
    if x.min() < -128 or x.max() > 127:
        raise DataError("input codes exceed int8 range")
    codes_out = [] if collect_codes else None
    q = 0
    acc = None
    pending = None
    for i, layer in enumerate(layers):
        if layer.kind in ("conv", "dense"):
            lp = model.params[q]
            W, b = model.weights[q]
            if layer.kind == "conv":
                acc = conv_forward(x, W.astype(np.int64), b.astype(np.int64))
            else:
                acc = dense_forward(x, W.astype(np.int64), b.astype(np.int64))
            if np.any(np.abs(acc) >= 2 ** 31):
                raise InvariantError(f"layer {q}: 32-bit accumulator overflow")
            pending = lp
            q += 1
            if i == len(layers) - 1:
                x = np.clip(_shift_round(acc, lp.output_shift), -128, 127)
                if collect_codes:
                    codes_out.append(x.astype(np.int32))
        elif layer.kind == "relu":
            x = np.clip(_shift_round(acc, pending.output_shift), 0, 127)
            if collect_codes:
                codes_out.append(x.astype(np.int32))
            pending = None
        elif layer.kind == "pool":
            x, _ = pool_forward(x)
        elif layer.kind == "flatten":
            x = x.reshape(x.shape[0], -1)
    e_out = model.params[-1].activation_exponent
    dequant = x.astype(np.float64) * 2.0 ** e_out
    if collect_codes:
        return x, dequant, codes_out
    return x, dequant


# ---------------------------------------------------------------------------
# weight size accounting


def weight_size_bytes(spec: NetworkSpec, preset: QuantPreset):
    """Total and per-layer packed weight bytes (weights + biases at the
    layer's bit width)."""
    bits = preset.layer_bits(spec)
    counts = param_counts(spec)
    per_layer = [math.ceil(n * b / 8) for n, b in zip(counts, bits)]
    return sum(per_layer), per_layer


# ---------------------------------------------------------------------------
# bit packing


def pack_bits(values: np.ndarray, bits: int) -> bytes:
    """Pack integers LSB-first at ``bits`` width, two's complement."""
    v = np.asarray(values, dtype=np.int64).ravel()
    lo, hi = quant_range(bits)
    if v.size and (v.min() < lo or v.max() > hi):
        raise DataError(f"value outside {bits}-bit range")
    u = (v & ((1 << bits) - 1)).astype(np.uint64)
    shifts = np.arange(bits, dtype=np.uint64)
    bit_matrix = ((u[:, None] >> shifts) & 1).astype(np.uint8)
    return np.packbits(bit_matrix.ravel(), bitorder="little").tobytes()


def unpack_bits(data: bytes, bits: int, count: int) -> np.ndarray:
    raw = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little")
    if len(raw) < count * bits:
        raise FormatError("packed weight block too short")
    bit_matrix = raw[:count * bits].reshape(count, bits).astype(np.int64)
    u = (bit_matrix << np.arange(bits)).sum(axis=1)
    sign_bit = np.int64(1) << (bits - 1)
    return np.where(u & sign_bit, u - (np.int64(1) << bits), u).astype(np.int32)


# ---------------------------------------------------------------------------
# quantized model file I/O

_EETQ_MAGIC = b"EETQ"


def save_integer_model(model: IntegerModel, path) -> None:
    desc = {
        "spec": _spec_descriptor(model.spec),
        "input_exponent": model.input_exponent,
        "activation_exponents": [p.activation_exponent for p in model.params],
    }
    blob = json.dumps(desc, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_EETQ_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for lp, (W, b) in zip(model.params, model.weights):
            fh.write(struct.pack("<Bbb I", lp.weight_bits, lp.weight_scale_exponent,
                                 lp.output_shift, W.size))
            fh.write(pack_bits(W.ravel(), lp.weight_bits))
            fh.write(np.ascontiguousarray(b, dtype="<i4").tobytes())


def load_integer_model(path) -> IntegerModel:
    with open(path, "rb") as fh:
        if fh.read(4) != _EETQ_MAGIC:
            raise FormatError(f"{path}: bad quantized model magic")
        (n,) = struct.unpack("<I", fh.read(4))
        desc = json.loads(fh.read(n).decode())
        spec = spec_from_descriptor(desc["spec"])
        act_exps = desc["activation_exponents"]
        input_exponent = desc["input_exponent"]
        layers = build_layers(spec)
        shapes = []
        for layer in layers:
            if layer.kind == "conv":
                shapes.append(((layer.out_shape[0], layer.in_shape[0], 3, 3),
                               layer.out_shape[0]))
            elif layer.kind == "dense":
                shapes.append(((layer.out_shape[0], layer.in_shape[0]),
                               layer.out_shape[0]))
        params, weights = [], []
        for q, (wshape, blen) in enumerate(shapes):
            hdr = fh.read(struct.calcsize("<Bbb I"))
            bits, e_w, shift, count = struct.unpack("<Bbb I", hdr)
            if count != int(np.prod(wshape)):
                raise FormatError(f"{path}: layer {q} weight count mismatch")
            nbytes = math.ceil(count * bits / 8)
            W = unpack_bits(fh.read(nbytes), bits, count).reshape(wshape)
            b = np.frombuffer(fh.read(4 * blen), dtype="<i4").astype(np.int32)
            params.append(LayerQuantParams(bits, e_w, act_exps[q], shift))
            weights.append((W, b))
    return IntegerModel(spec, params, weights, input_exponent)
