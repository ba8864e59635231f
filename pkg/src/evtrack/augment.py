"""Deterministic label-consistent augmentation: flips and pixel shifts.

Each input sample yields eight outputs: the four flip variants (identity,
vflip, hflip, vhflip), each in unshifted and independently shifted form.
Per-sample randomness is derived as seed XOR sample index, so the result
is independent of evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .framing import EventFrame, Sample

FLIP_MODES = ("identity", "v", "h", "vh")


@dataclass(frozen=True)
class AugmentPlan:
    seed: int
    shift_range: int = 30


def flip(sample: Sample, mode: str) -> Sample:
    """Mirror cells and label; visibility and polarity values unchanged."""
    if mode not in FLIP_MODES:
        raise DataError(f"unknown flip mode {mode!r}")
    cells = sample.frame.cells
    if cells.ndim != 2:
        raise DataError("flip expects an unfolded frame")
    h, w = cells.shape
    x, y = sample.x, sample.y
    if "v" in mode:
        cells = cells[::-1, :]
        y = (h - 1) - y
    if "h" in mode:
        cells = cells[:, ::-1]
        x = (w - 1) - x
    if mode == "identity":
        return sample
    frame = EventFrame(sample.frame.t_start, sample.frame.window,
                       np.ascontiguousarray(cells), sample.frame.event_count)
    if not sample.visible:
        x, y = sample.x, sample.y
    return Sample(frame, x, y, sample.visible)


def shift(sample: Sample, dx: int, dy: int, max_shift: int = 30) -> Sample:
    """Translate cells (dropping what leaves the frame) and the label.

    A label pushed outside the frame turns the sample not-visible.
    """
    if abs(dx) > max_shift or abs(dy) > max_shift:
        raise DataError(f"shift ({dx},{dy}) exceeds +-{max_shift}")
    cells = sample.frame.cells
    if cells.ndim != 2:
        raise DataError("shift expects an unfolded frame")
    h, w = cells.shape
    out = np.zeros_like(cells)
    src_x = slice(max(0, -dx), min(w, w - dx))
    src_y = slice(max(0, -dy), min(h, h - dy))
    dst_x = slice(max(0, dx), min(w, w + dx))
    dst_y = slice(max(0, dy), min(h, h + dy))
    out[dst_y, dst_x] = cells[src_y, src_x]
    frame = EventFrame(sample.frame.t_start, sample.frame.window, out,
                       sample.frame.event_count)
    if not sample.visible:
        return Sample(frame, sample.x, sample.y, False)
    x, y = sample.x + dx, sample.y + dy
    if 0 <= x < w and 0 <= y < h:
        return Sample(frame, x, y, True)
    return Sample(frame, 0.0, 0.0, False)


def augment_dataset(samples: list[Sample], plan: AugmentPlan) -> list[Sample]:
    """Expand the dataset exactly x8, deterministically under plan.seed."""
    if plan.shift_range < 0:
        raise DataError("shift_range must be non-negative")
    out: list[Sample] = []
    for i, sample in enumerate(samples):
        rng = np.random.default_rng(plan.seed ^ i)
        shifts = rng.integers(-plan.shift_range, plan.shift_range + 1, size=(4, 2))
        for mode, (dx, dy) in zip(FLIP_MODES, shifts):
            flipped = flip(sample, mode)
            out.append(flipped)
            out.append(shift(flipped, int(dx), int(dy), plan.shift_range))
    return out
