"""Accelerator-style static planning: buffer offsets, processors, costs.

The network is a linear chain, so buffer lifetimes are exact: layer k's
output is born when layer k runs and dies once layer k+1 has consumed it.
Offsets are assigned in birth order (greedy best-fit, with an alternating
strategy that is provably optimal when conflicts form a chain); a
validation sweep proves no two live-overlapping buffers share bytes.
Flatten is a pure reshape and aliases its input.

The latency/energy numbers produced here are model ESTIMATES from a named
platform profile, not measurements; the default max78000-like profile is
calibrated so the canonical 8-bit regression model lands at about 3 ms
input+inference.

Model description files and platform profiles are ``key=value`` text with
stable key ordering, so exports diff cleanly and round-trip exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from importlib import resources

from .errors import CapacityError, ConfigError, DataError, InvariantError
from .network import NetworkSpec, build_layers
from .quantize import IntegerModel, QuantPreset, weight_size_bytes


@dataclass(frozen=True)
class PlatformProfile:
    """Device constants for the cost model and capacity checks."""

    name: str
    processor_count: int = 64
    data_memory_bytes: int = 524_288
    weight_memory_bytes: int = 442_368
    cycles_per_macc: float = 0.005
    clock_hz: float = 50_000_000.0
    active_power_mw: float = 18.5
    idle_power_mw: float = 9.0
    input_load_ms: float = 0.227
    input_load_energy_uj: float = 2.0

    def __post_init__(self):
        for f in fields(self):
            if f.name == "name":
                continue
            if getattr(self, f.name) <= 0:
                raise ConfigError(f"profile field {f.name} must be positive")


_PROFILE_FIELDS = [f.name for f in fields(PlatformProfile)]


def write_profile(profile: PlatformProfile, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for name in _PROFILE_FIELDS:
            fh.write(f"{name}={getattr(profile, name)}\n")


def read_profile(path) -> PlatformProfile:
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, _, raw = line.partition("=")
            values[key.strip()] = raw.strip()
    kwargs = {}
    for f in fields(PlatformProfile):
        if f.name not in values:
            raise ConfigError(f"{path}: missing profile field {f.name}")
        raw = values[f.name]
        kwargs[f.name] = raw if f.name == "name" else (
            int(raw) if f.type == "int" else float(raw))
    return PlatformProfile(**kwargs)


def builtin_profile(name: str) -> PlatformProfile:
    """Load one of the profiles shipped with the package."""
    fname = f"{name}.profile"
    root = resources.files("evtrack") / "profiles"
    candidate = root / fname
    if not candidate.is_file():
        available = sorted(p.name[:-len(".profile")] for p in root.iterdir()
                           if p.name.endswith(".profile"))
        raise ConfigError(f"unknown profile {name!r}; available: {available}")
    with resources.as_file(candidate) as path:
        return read_profile(path)


# ---------------------------------------------------------------------------
# lifetimes


@dataclass(frozen=True)
class BufferLifetime:
    name: str
    size: int        # bytes (8-bit activations)
    birth: int       # step at which the buffer is written
    last_use: int    # last step that reads it
    is_input: bool = False


def _executable_layers(spec: NetworkSpec) -> list:
    """Layers that run as discrete steps: conv/pool/dense.  ReLU fuses into
    its producer and flatten aliases its input."""
    return [l for l in build_layers(spec) if l.kind in ("conv", "pool", "dense")]


def lifetimes(spec: NetworkSpec) -> list[BufferLifetime]:
    """Chain lifetimes: the input plus one buffer per executable layer."""
    steps = _executable_layers(spec)
    n = len(steps)
    out = [BufferLifetime("input", int(math.prod(spec.input_shape)), 0, 1,
                          is_input=True)]
    for k, layer in enumerate(steps, start=1):
        size = int(math.prod(layer.out_shape))
        last = min(k + 1, n)
        out.append(BufferLifetime(f"{layer.kind}{k}", size, k, last))
    return out


# ---------------------------------------------------------------------------
# memory planning


@dataclass(frozen=True)
class MemoryPlan:
    offsets: dict         # buffer name -> byte offset
    peak_bytes: int
    processor_map: dict   # step index (1-based) -> (lo, hi) inclusive processor range


def _overlaps(a: BufferLifetime, b: BufferLifetime) -> bool:
    return a.birth <= b.last_use and b.birth <= a.last_use


def _greedy_placement(order: list[BufferLifetime]) -> tuple[dict, int]:
    placed: list[tuple[BufferLifetime, int]] = []
    offsets = {}
    for buf in order:
        conflicts = sorted(((off, off + other.size)
                            for other, off in placed if _overlaps(buf, other)),
                           key=lambda iv: iv[0])
        candidate = 0
        for lo, hi in conflicts:
            if candidate + buf.size <= lo:
                break
            candidate = max(candidate, hi)
        offsets[buf.name] = candidate
        placed.append((buf, candidate))
    peak = max((off + b.size for b, off in placed), default=0)
    return offsets, peak


def _path_placement(order: list[BufferLifetime]):
    """Optimal placement when conflicts form a path in birth order.

    Even-position buffers sit at offset 0; each odd one sits just above its
    largest overlapping neighbor.  The resulting peak equals the largest
    overlapping-pair sum, which is the max-clique lower bound, so this is
    optimal whenever it applies.  Returns None for non-path conflicts.
    """
    n = len(order)
    for i in range(n):
        for j in range(i + 2, n):
            if _overlaps(order[i], order[j]):
                return None
    offsets = {}
    for k, buf in enumerate(order):
        if k % 2 == 0:
            offsets[buf.name] = 0
        else:
            base = 0
            for j in (k - 1, k + 1):
                if 0 <= j < n and _overlaps(buf, order[j]):
                    base = max(base, order[j].size)
            offsets[buf.name] = base
    peak = max((offsets[b.name] + b.size for b in order), default=0)
    return offsets, peak


def place_buffers(buffers: list[BufferLifetime]) -> tuple[dict, int]:
    """Deterministic placement in birth order: greedy best-fit, improved by
    the optimal path strategy when the conflict graph is a chain."""
    order = sorted(buffers, key=lambda b: (b.birth, b.name))
    offsets, peak = _greedy_placement(order)
    path = _path_placement(order)
    if path is not None and path[1] < peak:
        offsets, peak = path
    validate_placement(buffers, offsets)
    return offsets, peak


def validate_placement(buffers: list[BufferLifetime], offsets: dict) -> None:
    """Prove that live-overlapping buffers never share bytes."""
    for i, a in enumerate(buffers):
        for b in buffers[i + 1:]:
            if not _overlaps(a, b):
                continue
            a0, a1 = offsets[a.name], offsets[a.name] + a.size
            b0, b1 = offsets[b.name], offsets[b.name] + b.size
            if a0 < b1 and b0 < a1:
                raise InvariantError(f"buffers {a.name} and {b.name} overlap "
                                     f"in both lifetime and address range")


def map_processors(spec: NetworkSpec, profile: PlatformProfile) -> dict:
    """Processors {0..c-1} per step, c = input channels; dense gets all."""
    mapping = {}
    for k, layer in enumerate(_executable_layers(spec), start=1):
        if layer.kind == "dense":
            count = profile.processor_count
        else:
            count = layer.in_shape[0]
            if count > profile.processor_count:
                raise CapacityError(
                    f"step {k}: {count} input channels exceed "
                    f"{profile.processor_count} processors")
        mapping[k] = (0, count - 1)
    return mapping


def plan_memory(buffers: list[BufferLifetime], profile: PlatformProfile,
                processor_map: dict | None = None) -> MemoryPlan:
    for buf in buffers:
        if buf.size > profile.data_memory_bytes:
            raise CapacityError(f"buffer {buf.name} ({buf.size} B) exceeds data "
                                f"memory ({profile.data_memory_bytes} B)")
    offsets, peak = place_buffers(buffers)
    if peak > profile.data_memory_bytes:
        raise CapacityError(f"plan peak {peak} B exceeds data memory "
                            f"{profile.data_memory_bytes} B")
    return MemoryPlan(offsets, peak, processor_map or {})


# ---------------------------------------------------------------------------
# cost model


def macc_count(spec: NetworkSpec):
    """Per-layer and total multiply-accumulate counts.

    conv = out_h*out_w*out_c*in_c*9; dense = in*out; pools and
    activations cost nothing.
    """
    per_layer = []
    for layer in build_layers(spec):
        if layer.kind == "conv":
            oc, oh, ow = layer.out_shape
            per_layer.append(oh * ow * oc * layer.in_shape[0] * 9)
        elif layer.kind == "dense":
            per_layer.append(layer.in_shape[0] * layer.out_shape[0])
    return per_layer, sum(per_layer)


@dataclass(frozen=True)
class CostEstimate:
    """Model estimate (not a measurement) of one inference."""

    latency_ms: float
    energy_uj: float
    weight_bytes: int
    peak_bytes: int
    fits: bool


def estimate_cost(total_maccs: int, weight_bytes: int, peak_bytes: int,
                  profile: PlatformProfile) -> CostEstimate:
    compute_ms = total_maccs * profile.cycles_per_macc / profile.clock_hz * 1000.0
    latency = profile.input_load_ms + compute_ms
    energy = profile.input_load_energy_uj + profile.active_power_mw * compute_ms
    fits = (weight_bytes <= profile.weight_memory_bytes
            and peak_bytes <= profile.data_memory_bytes)
    return CostEstimate(latency, energy, weight_bytes, peak_bytes, fits)


def estimate(spec: NetworkSpec, preset: QuantPreset,
             profile: PlatformProfile) -> CostEstimate:
    _, total_maccs = macc_count(spec)
    total_bytes, _ = weight_size_bytes(spec, preset)
    plan = plan_memory(lifetimes(spec), profile)
    return estimate_cost(total_maccs, total_bytes, plan.peak_bytes, profile)


# ---------------------------------------------------------------------------
# model description export


def export_description(model: IntegerModel, plan: MemoryPlan, path) -> None:
    """Structured-text execution description with stable key order."""
    lines = render_description(model, plan)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(lines)


def render_description(model: IntegerModel, plan: MemoryPlan) -> str:
    steps = _executable_layers(model.spec)
    lines = [f"model.layer_count={len(steps)}",
             f"model.input_exponent={model.input_exponent}"]
    buffers = lifetimes(model.spec)
    weight_offset = 0
    q = 0
    for k, layer in enumerate(steps, start=1):
        name = f"{layer.kind}{k}"
        lines.append(f"layer.{k}.kind={layer.kind}")
        lines.append(f"layer.{k}.in_shape={','.join(map(str, layer.in_shape))}")
        lines.append(f"layer.{k}.out_shape={','.join(map(str, layer.out_shape))}")
        if layer.kind in ("conv", "dense"):
            lp = model.params[q]
            nbytes = (math.ceil(model.weights[q][0].size * lp.weight_bits / 8)
                      + 4 * model.weights[q][1].size)
            lines.append(f"layer.{k}.weight_bits={lp.weight_bits}")
            lines.append(f"layer.{k}.weight_scale_exponent={lp.weight_scale_exponent}")
            lines.append(f"layer.{k}.output_shift={lp.output_shift}")
            lines.append(f"layer.{k}.weight_bytes={weight_offset}:{weight_offset + nbytes}")
            weight_offset += nbytes
            q += 1
        lines.append(f"layer.{k}.output_offset={plan.offsets[name]}")
        if k in plan.processor_map:
            lo, hi = plan.processor_map[k]
            lines.append(f"layer.{k}.processors={lo}-{hi}")
    lines.append(f"plan.input_offset={plan.offsets['input']}")
    lines.append(f"plan.peak_bytes={plan.peak_bytes}")
    del buffers
    return "\n".join(lines) + "\n"


def parse_description(path) -> dict:
    """Parse an exported description back into a flat key->string dict."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if "=" not in line:
                raise DataError(f"{path}:{lineno}: expected key=value")
            key, _, value = line.partition("=")
            out[key] = value
    return out
