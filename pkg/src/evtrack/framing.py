"""Fixed-rate event frames, per-user ROI, cropping, downsampling, folding.

Frames accumulate net polarity per pixel over disjoint 5 ms slots
(clamped to int8); slots below the minimum event threshold emit nothing,
keeping the 200 Hz slot grid exact.  The per-user region of interest is a
fixed 157x90 window centered on the trimmed density centroid of the event
mass, so that all users land on a common origin after cropping.

Frames binary format: magic ``FRM0``, little-endian u16 width, u16 height,
u32 window_us, u32 frame count; per frame u64 t_start, u32 event_count,
then width*height int8 cells row-major.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, DataError, FormatError
from .events import EventStream, LabelTrack

ROI_WIDTH = 157
ROI_HEIGHT = 90

_FRM_MAGIC = b"FRM0"
_FRM_HEADER = np.dtype([("w", "<u2"), ("h", "<u2"), ("win", "<u4"), ("n", "<u4")])
_FRM_RECORD_HEAD = np.dtype([("t", "<u8"), ("n", "<u4")])


@dataclass(frozen=True)
class EventFrame:
    """Accumulated signed event counts for one time slot.

    ``cells`` is int8 with shape (height, width), or (channels, height,
    width) after folding.  ``event_count`` is the total number of events
    accumulated in the originating slot (before clamping).
    """

    t_start: int
    window: int
    cells: np.ndarray
    event_count: int

    @property
    def height(self) -> int:
        return self.cells.shape[-2]

    @property
    def width(self) -> int:
        return self.cells.shape[-1]

    @property
    def channels(self) -> int:
        return 1 if self.cells.ndim == 2 else self.cells.shape[0]


@dataclass(frozen=True)
class RoiSpec:
    """A fixed-size crop window in sensor coordinates."""

    x0: int
    y0: int
    width: int = ROI_WIDTH
    height: int = ROI_HEIGHT


@dataclass(frozen=True)
class Sample:
    """A frame paired with a pupil label in the frame's own pixel coords."""

    frame: EventFrame
    x: float
    y: float
    visible: bool


def accumulate_frames(stream: EventStream, window: int = 5000,
                      min_events: int = 150) -> list[EventFrame]:
    """Accumulate events into fixed slots [k*window, (k+1)*window).

    Slots with fewer than ``min_events`` events produce no frame.
    """
    if window <= 0:
        raise DataError("window must be positive")
    if len(stream) == 0:
        return []
    h, w = stream.height, stream.width
    slots = (stream.t // np.uint64(window)).astype(np.int64)
    # events are time-sorted, so each slot is a contiguous run
    uniq, starts = np.unique(slots, return_index=True)
    bounds = np.append(starts, len(stream))
    frames = []
    for k, lo, hi in zip(uniq, bounds[:-1], bounds[1:]):
        n = int(hi - lo)
        if n < min_events:
            continue
        flat = stream.y[lo:hi].astype(np.int64) * w + stream.x[lo:hi]
        net = np.bincount(flat, weights=stream.p[lo:hi], minlength=h * w)
        cells = np.clip(net.reshape(h, w), -128, 127).astype(np.int8)
        frames.append(EventFrame(int(k) * window, window, cells, n))
    return frames


def _weighted_median(values: np.ndarray, weights: np.ndarray) -> float:
    order = np.argsort(values, kind="stable")
    cum = np.cumsum(weights[order])
    if cum[-1] <= 0:
        return float(values[len(values) // 2])
    idx = int(np.searchsorted(cum, cum[-1] / 2.0))
    return float(values[order[min(idx, len(values) - 1)]])


def compute_user_roi(frames: list[EventFrame], coverage: float = 0.95,
                     roi_width: int = ROI_WIDTH, roi_height: int = ROI_HEIGHT) -> RoiSpec:
    """Fixed-size ROI centered on the trimmed density centroid.

    Event mass beyond 3 median-absolute-deviations (per axis) is dropped
    before the centroid, which makes the result robust to eyelid noise and
    equivariant under integer translation of the event mass.
    """
    if not frames:
        raise DataError("compute_user_roi needs at least one frame")
    h, w = frames[0].height, frames[0].width
    if roi_width > w or roi_height > h:
        raise DataError("ROI larger than sensor geometry")
    density = np.zeros((h, w), dtype=np.float64)
    for f in frames:
        if f.cells.ndim != 2:
            raise DataError("compute_user_roi expects unfolded frames")
        density += np.abs(f.cells.astype(np.int64))
    total = density.sum()
    if total <= 0:
        raise DataError("no event mass in frames")

    ys, xs = np.nonzero(density)
    wts = density[ys, xs]
    med_x = _weighted_median(xs.astype(np.float64), wts)
    med_y = _weighted_median(ys.astype(np.float64), wts)
    mad_x = _weighted_median(np.abs(xs - med_x), wts)
    mad_y = _weighted_median(np.abs(ys - med_y), wts)
    keep = ((np.abs(xs - med_x) <= 3.0 * max(mad_x, 0.5))
            & (np.abs(ys - med_y) <= 3.0 * max(mad_y, 0.5)))
    kw = wts[keep]
    cx = float(np.sum(xs[keep] * kw) / kw.sum())
    cy = float(np.sum(ys[keep] * kw) / kw.sum())

    x0 = int(np.floor(cx + 0.5)) - roi_width // 2
    y0 = int(np.floor(cy + 0.5)) - roi_height // 2
    x0 = min(max(x0, 0), w - roi_width)
    y0 = min(max(y0, 0), h - roi_height)
    roi = RoiSpec(x0, y0, roi_width, roi_height)

    inside = density[y0:y0 + roi_height, x0:x0 + roi_width].sum() / total
    if inside < coverage:
        raise CapacityError(
            f"ROI covers {inside:.3f} of event mass, below requested "
            f"coverage {coverage:.3f}")
    return roi


def align_and_crop(frame: EventFrame, roi: RoiSpec,
                   reference_origin: tuple[int, int] = (0, 0)) -> EventFrame:
    """Crop the ROI window; output pixel (i,j) = input (roi.y0+j, roi.x0+i).

    Cropping each user at their own ROI lands everyone on the shared
    origin, so ``reference_origin`` only documents where that origin sits
    in sensor coordinates.
    """
    del reference_origin
    if frame.cells.ndim != 2:
        raise DataError("align_and_crop expects an unfolded frame")
    if (roi.x0 < 0 or roi.y0 < 0 or roi.x0 + roi.width > frame.width
            or roi.y0 + roi.height > frame.height):
        raise DataError(f"roi {roi} outside frame {frame.width}x{frame.height}")
    cells = frame.cells[roi.y0:roi.y0 + roi.height, roi.x0:roi.x0 + roi.width].copy()
    return EventFrame(frame.t_start, frame.window, cells, frame.event_count)


def downsample(frame: EventFrame, factor: int = 2) -> EventFrame:
    """Saturating sum-pool by ``factor``; trailing odd rows/columns drop.

    Labels must be scaled by 1/factor by the caller.
    """
    if factor < 1:
        raise DataError("factor must be >= 1")
    if factor == 1:
        return frame
    if frame.cells.ndim != 2:
        raise DataError("downsample expects an unfolded frame")
    h = frame.height // factor * factor
    w = frame.width // factor * factor
    blocks = frame.cells[:h, :w].astype(np.int32)
    blocks = blocks.reshape(h // factor, factor, w // factor, factor).sum(axis=(1, 3))
    cells = np.clip(blocks, -128, 127).astype(np.int8)
    return EventFrame(frame.t_start, frame.window, cells, frame.event_count)


def fold_channels(frame: EventFrame, fold: int = 2) -> EventFrame:
    """Split columns round-robin into ``fold`` channels (lossless)."""
    if fold < 1:
        raise DataError("fold must be >= 1")
    if fold == 1:
        return frame
    if frame.cells.ndim != 2:
        raise DataError("frame already folded")
    if frame.width % fold != 0:
        raise DataError(f"width {frame.width} not divisible by fold {fold}")
    h, w = frame.height, frame.width
    cells = frame.cells.reshape(h, w // fold, fold).transpose(2, 0, 1).copy()
    return EventFrame(frame.t_start, frame.window, cells, frame.event_count)


def unfold_channels(frame: EventFrame) -> EventFrame:
    """Inverse of fold_channels."""
    if frame.cells.ndim == 2:
        return frame
    c, h, w = frame.cells.shape
    cells = frame.cells.transpose(1, 2, 0).reshape(h, w * c).copy()
    return EventFrame(frame.t_start, frame.window, cells, frame.event_count)


def attach_labels(frames: list[EventFrame], track: LabelTrack,
                  roi: RoiSpec) -> list[Sample]:
    """Pair each frame with the label nearest its midpoint (within half a
    window), transformed to ROI coordinates; otherwise visible=False."""
    samples = []
    track_t = track.t.astype(np.int64)
    for frame in frames:
        mid = frame.t_start + frame.window // 2
        x = y = 0.0
        visible = False
        if len(track):
            i = int(np.searchsorted(track_t, mid))
            best, best_dt = None, None
            for j in (i - 1, i):
                if 0 <= j < len(track):
                    dt = abs(int(track_t[j]) - mid)
                    if best_dt is None or dt < best_dt:
                        best, best_dt = j, dt
            if best is not None and best_dt * 2 <= frame.window and track.visible[best]:
                x = float(track.x[best]) - roi.x0
                y = float(track.y[best]) - roi.y0
                visible = bool(0 <= x < roi.width and 0 <= y < roi.height)
                if not visible:
                    x = y = 0.0
        samples.append(Sample(frame, x, y, visible))
    return samples


def scale_sample_labels(samples: list[Sample], factor: int) -> list[Sample]:
    """Label counterpart of downsample: divide coordinates by ``factor``."""
    return [Sample(s.frame, s.x / factor, s.y / factor, s.visible) for s in samples]


# ---------------------------------------------------------------------------
# frames + samples file I/O


def write_frames(frames: list[EventFrame], path) -> None:
    if frames:
        w, h, win = frames[0].width, frames[0].height, frames[0].window
        for f in frames:
            if (f.width, f.height, f.window) != (w, h, win) or f.cells.ndim != 2:
                raise DataError("write_frames requires homogeneous unfolded frames")
    else:
        w = h = win = 0
    header = np.zeros(1, dtype=_FRM_HEADER)
    header["w"], header["h"], header["win"], header["n"] = w, h, win, len(frames)
    with open(path, "wb") as fh:
        fh.write(_FRM_MAGIC)
        fh.write(header.tobytes())
        for f in frames:
            rec = np.zeros(1, dtype=_FRM_RECORD_HEAD)
            rec["t"], rec["n"] = f.t_start, f.event_count
            fh.write(rec.tobytes())
            fh.write(f.cells.tobytes())


def read_frames(path) -> list[EventFrame]:
    with open(path, "rb") as fh:
        if fh.read(4) != _FRM_MAGIC:
            raise FormatError(f"{path}: bad frames magic")
        header = np.frombuffer(fh.read(_FRM_HEADER.itemsize), dtype=_FRM_HEADER)[0]
        w, h, win, n = (int(header[k]) for k in ("w", "h", "win", "n"))
        frames = []
        for _ in range(n):
            rec = np.frombuffer(fh.read(_FRM_RECORD_HEAD.itemsize),
                                dtype=_FRM_RECORD_HEAD)[0]
            cells = np.frombuffer(fh.read(h * w), dtype=np.int8).reshape(h, w).copy()
            frames.append(EventFrame(int(rec["t"]), win, cells, int(rec["n"])))
    return frames


def write_samples_csv(samples: list[Sample], path) -> None:
    """Sidecar with labels per frame index, header frame_idx,x,y,visible."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame_idx", "x", "y", "visible"])
        for i, s in enumerate(samples):
            writer.writerow([i, f"{s.x:.4f}", f"{s.y:.4f}", int(s.visible)])


def read_samples_csv(frames: list[EventFrame], path) -> list[Sample]:
    samples = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        head = next(reader, None)
        if head != ["frame_idx", "x", "y", "visible"]:
            raise FormatError(f"{path}: bad samples CSV header {head!r}")
        for row in reader:
            if not row:
                continue
            idx = int(row[0])
            if idx >= len(frames):
                raise FormatError(f"{path}: frame_idx {idx} out of range")
            samples.append(Sample(frames[idx], float(row[1]), float(row[2]),
                                  bool(int(row[3]))))
    return samples
