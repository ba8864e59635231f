"""Event-camera stream I/O, validation, and synthetic eye-sequence generation.

An event stream is a time-sorted sequence of per-pixel brightness-change
records (t in microseconds, pixel x/y, polarity +1/-1) over a fixed sensor
geometry (346x260 by default).  Streams are stored column-wise in numpy
arrays and are immutable once constructed.

File formats:
  CSV     header ``t_us,x,y,p`` with p in {1,-1}.
  Binary  magic ``EVT0``, little-endian u16 width, u16 height, u64 count,
          then per event u64 t_us, u16 x, u16 y, i8 polarity (13 bytes).
Label tracks use CSV with header ``t_us,x,y,visible`` (visible in {0,1}).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .errors import DataError, FormatError

DEFAULT_WIDTH = 346
DEFAULT_HEIGHT = 260

_EVT_MAGIC = b"EVT0"
_HEADER = np.dtype([("w", "<u2"), ("h", "<u2"), ("n", "<u8")])
_RECORD = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1")])


class Event(NamedTuple):
    t: int
    x: int
    y: int
    polarity: int


@dataclass(frozen=True)
class EventStream:
    """Immutable column-wise event stream over a fixed sensor geometry."""

    width: int
    height: int
    t: np.ndarray  # uint64, microseconds, non-decreasing
    x: np.ndarray  # uint16
    y: np.ndarray  # uint16
    p: np.ndarray  # int8, +1 / -1

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, i: int) -> Event:
        return Event(int(self.t[i]), int(self.x[i]), int(self.y[i]), int(self.p[i]))

    @classmethod
    def from_arrays(cls, width, height, t, x, y, p) -> "EventStream":
        t = np.asarray(t, dtype=np.uint64)
        x = np.asarray(x, dtype=np.uint16)
        y = np.asarray(y, dtype=np.uint16)
        p = np.asarray(p, dtype=np.int8)
        if not (len(t) == len(x) == len(y) == len(p)):
            raise DataError("event columns have mismatched lengths")
        stream = cls(int(width), int(height), t, x, y, p)
        violations = validate_stream(stream)
        if violations:
            raise DataError(violations[0])
        return stream


def validate_stream(stream: EventStream) -> list[str]:
    """Report every invariant violation without mutating the stream."""
    report: list[str] = []
    if stream.width <= 0 or stream.height <= 0:
        report.append(f"non-positive geometry {stream.width}x{stream.height}")
        return report
    bad_x = np.flatnonzero(stream.x >= stream.width)
    if bad_x.size:
        i = int(bad_x[0])
        report.append(f"x={int(stream.x[i])} out of range at index {i} (width {stream.width})")
    bad_y = np.flatnonzero(stream.y >= stream.height)
    if bad_y.size:
        i = int(bad_y[0])
        report.append(f"y={int(stream.y[i])} out of range at index {i} (height {stream.height})")
    bad_p = np.flatnonzero(np.abs(stream.p.astype(np.int16)) != 1)
    if bad_p.size:
        i = int(bad_p[0])
        report.append(f"polarity={int(stream.p[i])} not in {{+1,-1}} at index {i}")
    if len(stream) > 1:
        drops = np.flatnonzero(np.diff(stream.t.astype(np.int64)) < 0)
        if drops.size:
            i = int(drops[0]) + 1
            report.append(f"non-monotonic timestamp at index {i}")
    return report


def rate_histogram(stream: EventStream, bin_us: int = 5000) -> np.ndarray:
    """Events per time bin; the histogram sums to the event count."""
    if len(stream) == 0:
        return np.zeros(0, dtype=np.int64)
    slots = (stream.t // np.uint64(bin_us)).astype(np.int64)
    return np.bincount(slots)


# ---------------------------------------------------------------------------
# stream I/O


def write_events(stream: EventStream, path, format: str = "binary") -> None:
    if format == "binary":
        header = np.zeros(1, dtype=_HEADER)
        header["w"], header["h"], header["n"] = stream.width, stream.height, len(stream)
        records = np.empty(len(stream), dtype=_RECORD)
        records["t"], records["x"] = stream.t, stream.x
        records["y"], records["p"] = stream.y, stream.p
        with open(path, "wb") as fh:
            fh.write(_EVT_MAGIC)
            fh.write(header.tobytes())
            fh.write(records.tobytes())
    elif format == "csv":
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t_us", "x", "y", "p"])
            for i in range(len(stream)):
                writer.writerow([int(stream.t[i]), int(stream.x[i]),
                                 int(stream.y[i]), int(stream.p[i])])
    else:
        raise FormatError(f"unknown event format {format!r}")


def read_events(path, format: str = "binary",
                width: int = DEFAULT_WIDTH, height: int = DEFAULT_HEIGHT) -> EventStream:
    """Read and validate an event stream.

    CSV files carry no geometry, so width/height must be supplied; binary
    files store theirs in the header.
    """
    if format == "binary":
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != _EVT_MAGIC:
                raise FormatError(f"{path}: bad magic {magic!r}, expected {_EVT_MAGIC!r}")
            raw = fh.read(_HEADER.itemsize)
            if len(raw) != _HEADER.itemsize:
                raise FormatError(f"{path}: truncated header")
            header = np.frombuffer(raw, dtype=_HEADER)[0]
            n = int(header["n"])
            body = fh.read()
        if len(body) != n * _RECORD.itemsize:
            raise FormatError(f"{path}: expected {n} records, "
                              f"got {len(body) // _RECORD.itemsize}")
        records = np.frombuffer(body, dtype=_RECORD)
        return EventStream.from_arrays(int(header["w"]), int(header["h"]),
                                       records["t"], records["x"],
                                       records["y"], records["p"])
    if format == "csv":
        ts, xs, ys, ps = [], [], [], []
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            head = next(reader, None)
            if head != ["t_us", "x", "y", "p"]:
                raise FormatError(f"{path}: bad CSV header {head!r}")
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                try:
                    t, x, y, p = (int(v) for v in row)
                except (ValueError, TypeError) as exc:
                    raise FormatError(f"{path}:{lineno}: malformed record {row!r}") from exc
                ts.append(t); xs.append(x); ys.append(y); ps.append(p)
        return EventStream.from_arrays(width, height, ts, xs, ys, ps)
    raise FormatError(f"unknown event format {format!r}")


# ---------------------------------------------------------------------------
# label tracks


@dataclass(frozen=True)
class LabelTrack:
    """Time-sorted pupil-center labels; x/y are ignored when not visible."""

    rate_hz: float
    t: np.ndarray        # uint64 microseconds
    x: np.ndarray        # float64, subpixel column
    y: np.ndarray        # float64, subpixel row
    visible: np.ndarray  # bool

    def __post_init__(self):
        if len(self.t) > 1 and np.any(np.diff(self.t.astype(np.int64)) < 0):
            raise DataError("label track not time-sorted")

    def __len__(self) -> int:
        return len(self.t)


def write_labels(track: LabelTrack, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_us", "x", "y", "visible"])
        for i in range(len(track)):
            writer.writerow([int(track.t[i]), f"{track.x[i]:.4f}",
                             f"{track.y[i]:.4f}", int(track.visible[i])])


def read_labels(path, rate_hz: float = 200.0) -> LabelTrack:
    ts, xs, ys, vs = [], [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        head = next(reader, None)
        if head != ["t_us", "x", "y", "visible"]:
            raise FormatError(f"{path}: bad label CSV header {head!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                ts.append(int(row[0])); xs.append(float(row[1]))
                ys.append(float(row[2])); vs.append(bool(int(row[3])))
            except (ValueError, IndexError) as exc:
                raise FormatError(f"{path}:{lineno}: malformed label {row!r}") from exc
    return LabelTrack(rate_hz, np.asarray(ts, dtype=np.uint64),
                      np.asarray(xs), np.asarray(ys), np.asarray(vs, dtype=bool))


# ---------------------------------------------------------------------------
# synthetic eye sequences


@dataclass(frozen=True)
class SynthParams:
    """Knobs for the synthetic eye-sequence generator.

    The pupil center follows a piecewise-linear trajectory (explicit
    ``waypoints`` or one drawn from the seed inside ``roam_box``).  Events
    are emitted on the pupil rim only while the pupil moves, at a rate
    proportional to speed; polarity follows the motion direction (leading
    edge positive).  Uniform background noise and a horizontal eyelid-band
    noise component are added on top.
    """

    width: int = DEFAULT_WIDTH
    height: int = DEFAULT_HEIGHT
    duration_us: int = 1_000_000
    pupil_radius: float = 14.0
    waypoints: tuple | None = None          # ((t_us, x, y), ...) overrides roam
    n_segments: int = 12
    roam_box: tuple = (115.0, 85.0, 235.0, 140.0)  # x0, y0, x1, y1
    saccade_prob: float = 0.3
    edge_rate: float = 6.0e5                # rim events/s at ref_speed
    ref_speed: float = 200.0                # px/s
    rim_jitter: float = 1.0                 # px, radial
    noise_rate: float = 3.0e3               # uniform events/s
    eyelid_rate: float = 5.0e3              # events/s inside eyelid_band
    eyelid_band: tuple = (30.0, 70.0)       # y range, px
    label_rate_hz: int = 200
    step_us: int = 1000                     # simulation step


def _check_params(params: SynthParams) -> None:
    for name in ("edge_rate", "noise_rate", "eyelid_rate"):
        if getattr(params, name) < 0:
            raise DataError(f"{name} must be non-negative")
    if params.duration_us <= 0 or params.step_us <= 0:
        raise DataError("duration_us and step_us must be positive")
    if params.pupil_radius <= 0:
        raise DataError("pupil_radius must be positive")


def _trajectory(params: SynthParams, rng: np.random.Generator):
    """Piecewise-linear center trajectory as (t_us[], x[], y[]) knots."""
    margin = params.pupil_radius + 3.0
    if params.waypoints is not None:
        knots = np.asarray(params.waypoints, dtype=np.float64)
    else:
        x0, y0, x1, y1 = params.roam_box
        pts = [(0.0, rng.uniform(x0, x1), rng.uniform(y0, y1))]
        t = 0.0
        mean_seg = params.duration_us / params.n_segments
        while t < params.duration_us:
            if rng.uniform() < params.saccade_prob:
                dt = rng.uniform(0.02, 0.05) * mean_seg  # fast jump
            else:
                dt = rng.uniform(0.7, 1.3) * mean_seg
            t += dt
            pts.append((t, rng.uniform(x0, x1), rng.uniform(y0, y1)))
        knots = np.asarray(pts)
    tx, xx, yy = knots[:, 0], knots[:, 1], knots[:, 2]
    inside = ((xx >= margin) & (xx < params.width - margin)
              & (yy >= margin) & (yy < params.height - margin))
    if not np.all(inside):
        i = int(np.flatnonzero(~inside)[0])
        raise DataError(f"trajectory waypoint {i} at ({xx[i]:.1f},{yy[i]:.1f}) "
                        f"exits sensor bounds")
    return tx, xx, yy


def _center_at(t, tx, xx, yy):
    return np.interp(t, tx, xx), np.interp(t, tx, yy)


def synth_eye_sequence(params: SynthParams, seed: int) -> tuple[EventStream, LabelTrack]:
    """Generate a deterministic synthetic event stream plus ground truth.

    Identical (params, seed) produce bitwise-identical output.
    """
    _check_params(params)
    rng = np.random.default_rng(seed)
    tx, xx, yy = _trajectory(params, rng)

    bursts_t, bursts_x, bursts_y, bursts_p = [], [], [], []
    step_s = params.step_us * 1e-6
    y_lo, y_hi = params.eyelid_band
    for t0 in range(0, params.duration_us, params.step_us):
        t1 = min(t0 + params.step_us, params.duration_us)
        dt_s = (t1 - t0) * 1e-6
        cx0, cy0 = _center_at(t0, tx, xx, yy)
        cx1, cy1 = _center_at(t1, tx, xx, yy)
        speed = math.hypot(cx1 - cx0, cy1 - cy0) / dt_s if dt_s > 0 else 0.0

        n_rim = 0
        if speed > 0 and params.edge_rate > 0:
            lam = params.edge_rate * dt_s * min(speed / params.ref_speed, 4.0)
            n_rim = int(rng.poisson(lam))
        if n_rim:
            phi = math.atan2(cy1 - cy0, cx1 - cx0)
            theta = rng.uniform(0.0, 2.0 * math.pi, n_rim)
            frac = rng.uniform(0.0, 1.0, n_rim)
            r = params.pupil_radius + rng.normal(0.0, params.rim_jitter, n_rim)
            cx = cx0 + frac * (cx1 - cx0)
            cy = cy0 + frac * (cy1 - cy0)
            ex = cx + r * np.cos(theta)
            ey = cy + r * np.sin(theta)
            pol = np.where(np.cos(theta - phi) >= 0, 1, -1).astype(np.int8)
            et = (t0 + frac * (t1 - t0)).astype(np.uint64)
            bursts_t.append(et); bursts_x.append(ex); bursts_y.append(ey)
            bursts_p.append(pol)

        n_noise = int(rng.poisson(params.noise_rate * dt_s)) if params.noise_rate else 0
        if n_noise:
            bursts_t.append((t0 + rng.uniform(0, t1 - t0, n_noise)).astype(np.uint64))
            bursts_x.append(rng.uniform(0, params.width, n_noise))
            bursts_y.append(rng.uniform(0, params.height, n_noise))
            bursts_p.append(rng.choice(np.array([-1, 1], dtype=np.int8), n_noise))

        n_lid = int(rng.poisson(params.eyelid_rate * dt_s)) if params.eyelid_rate else 0
        if n_lid:
            bursts_t.append((t0 + rng.uniform(0, t1 - t0, n_lid)).astype(np.uint64))
            bursts_x.append(rng.uniform(0, params.width, n_lid))
            bursts_y.append(rng.uniform(y_lo, y_hi, n_lid))
            bursts_p.append(rng.choice(np.array([-1, 1], dtype=np.int8), n_lid))

    if bursts_t:
        t = np.concatenate(bursts_t)
        ex = np.clip(np.concatenate(bursts_x), 0, params.width - 1).astype(np.uint16)
        ey = np.clip(np.concatenate(bursts_y), 0, params.height - 1).astype(np.uint16)
        pol = np.concatenate(bursts_p)
        order = np.argsort(t, kind="stable")
        t, ex, ey, pol = t[order], ex[order], ey[order], pol[order]
    else:
        t = np.zeros(0, dtype=np.uint64)
        ex = np.zeros(0, dtype=np.uint16)
        ey = np.zeros(0, dtype=np.uint16)
        pol = np.zeros(0, dtype=np.int8)
    stream = EventStream(params.width, params.height, t, ex, ey, pol)

    period_us = 1_000_000 / params.label_rate_hz
    n_labels = int(params.duration_us // period_us) + 1
    lt = np.round(np.arange(n_labels) * period_us).astype(np.uint64)
    lx, ly = _center_at(lt.astype(np.float64), tx, xx, yy)
    track = LabelTrack(float(params.label_rate_hz), lt, lx, ly,
                       np.ones(n_labels, dtype=bool))
    return stream, track
