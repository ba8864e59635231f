"""Tracking metrics and dataset-level evaluation reports.

All distances are reported in ROI pixels (the 157x90 pre-downsampling
coordinate frame).  Definitions fixed here:
  - mean absolute error per sample = (|dx| + |dy|) / 2;
  - pixel distance = Euclidean distance;
  - block distance = Euclidean distance between grid cell centers;
  - angle error = pixel distance times a configurable degrees-per-pixel
    factor (0.76 by default), standing in for the camera geometry.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .framing import Sample
from .network import GridSpec, cell_to_center, label_to_cell

DEG_PER_PX = 0.76


def pixel_distance(pred: tuple, label: tuple) -> float:
    if pred is None or label is None:
        raise DataError("pixel_distance needs two visible points")
    return math.hypot(pred[0] - label[0], pred[1] - label[1])


def mae(pred: tuple, label: tuple) -> float:
    """Mean of per-axis absolute errors."""
    if pred is None or label is None:
        raise DataError("mae needs two visible points")
    return (abs(pred[0] - label[0]) + abs(pred[1] - label[1])) / 2.0


def block_distance(pred_class: int, true_class: int, grid: GridSpec) -> float:
    if pred_class == grid.invisible_class or true_class == grid.invisible_class:
        raise DataError("block_distance is undefined for the not-visible class")
    return pixel_distance(cell_to_center(pred_class, grid),
                          cell_to_center(true_class, grid))


def angle_error(pixel_dist: float, deg_per_px: float = DEG_PER_PX) -> float:
    if deg_per_px <= 0:
        raise DataError("deg_per_px must be positive")
    return pixel_dist * deg_per_px


@dataclass
class EvalRecord:
    index: int
    pred_x: float
    pred_y: float
    label_x: float
    label_y: float
    visible_true: bool
    visible_pred: bool
    mae_px: float = float("nan")
    pixel_distance_px: float = float("nan")
    block_distance_px: float = float("nan")
    angle_error_deg: float = float("nan")


@dataclass
class EvalReport:
    records: list = field(default_factory=list)
    mean_absolute_error_px: float = float("nan")
    mean_pixel_distance_px: float = float("nan")
    mean_block_distance_px: float = float("nan")
    mean_angle_error_deg: float = float("nan")
    visibility_confusions: int = 0
    n_scored: int = 0
    weight_bytes: int | None = None


def evaluate(samples: list[Sample], predict, kind: str = "regression",
             grid: GridSpec | None = None, deg_per_px: float = DEG_PER_PX,
             label_scale: float = 1.0, weight_bytes: int | None = None,
             batch: int = 256) -> EvalReport:
    """Run a predictor over labeled samples and aggregate metrics.

    ``predict`` maps a frame batch (N, C, H, W) int8 to (N, 2) normalized
    coordinates (regression) or (N, n_classes) scores (classification).
    ``label_scale`` converts the samples' label coordinates to ROI pixels
    (e.g. 2.0 after downsampling by 2).
    """
    if not samples:
        raise DataError("evaluate needs at least one sample")
    grid = grid or GridSpec()
    frames = np.stack([s.frame.cells.reshape(
        (s.frame.channels, s.frame.height, s.frame.width)) for s in samples])
    outputs = []
    for i in range(0, len(frames), batch):
        outputs.append(np.asarray(predict(frames[i:i + batch])))
    out = np.concatenate(outputs)

    report = EvalReport(weight_bytes=weight_bytes)
    maes, pds, bds, angs = [], [], [], []
    for i, s in enumerate(samples):
        lx, ly = s.x * label_scale, s.y * label_scale
        rec = EvalRecord(i, float("nan"), float("nan"), lx, ly, s.visible, True)
        pred_class = None
        if kind == "regression":
            px, py = float(out[i, 0]) * grid.roi_width, float(out[i, 1]) * grid.roi_height
            rec.pred_x, rec.pred_y = px, py
        elif kind == "classification":
            pred_class = int(np.argmax(out[i]))
            center = cell_to_center(pred_class, grid)
            rec.visible_pred = center is not None
            if center is not None:
                rec.pred_x, rec.pred_y = center
        else:
            raise DataError(f"unknown evaluation kind {kind!r}")

        if s.visible != rec.visible_pred:
            report.visibility_confusions += 1
            report.records.append(rec)
            continue
        if not s.visible:
            report.records.append(rec)
            continue
        pred_pt, label_pt = (rec.pred_x, rec.pred_y), (lx, ly)
        rec.mae_px = mae(pred_pt, label_pt)
        rec.pixel_distance_px = pixel_distance(pred_pt, label_pt)
        rec.angle_error_deg = angle_error(rec.pixel_distance_px, deg_per_px)
        maes.append(rec.mae_px)
        pds.append(rec.pixel_distance_px)
        angs.append(rec.angle_error_deg)
        if kind == "classification":
            true_class = label_to_cell(lx, ly, True, grid)
            rec.block_distance_px = block_distance(pred_class, true_class, grid)
            bds.append(rec.block_distance_px)
        report.records.append(rec)

    report.n_scored = len(pds)
    if pds:
        report.mean_absolute_error_px = float(np.mean(maes))
        report.mean_pixel_distance_px = float(np.mean(pds))
        report.mean_angle_error_deg = float(np.mean(angs))
    if bds:
        report.mean_block_distance_px = float(np.mean(bds))
    return report


# ---------------------------------------------------------------------------
# report and heatmap emission

_CSV_COLUMNS = ["index", "pred_x", "pred_y", "label_x", "label_y",
                "visible_true", "visible_pred", "mae_px", "pixel_distance_px",
                "block_distance_px", "angle_error_deg"]


def write_report_csv(report: EvalReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CSV_COLUMNS)
        for r in report.records:
            writer.writerow([r.index,
                             f"{r.pred_x:.6f}", f"{r.pred_y:.6f}",
                             f"{r.label_x:.6f}", f"{r.label_y:.6f}",
                             int(r.visible_true), int(r.visible_pred),
                             f"{r.mae_px:.6f}", f"{r.pixel_distance_px:.6f}",
                             f"{r.block_distance_px:.6f}",
                             f"{r.angle_error_deg:.6f}"])


def write_report_summary(report: EvalReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"n_records={len(report.records)}\n")
        fh.write(f"n_scored={report.n_scored}\n")
        fh.write(f"mean_absolute_error_px={report.mean_absolute_error_px:.6f}\n")
        fh.write(f"mean_pixel_distance_px={report.mean_pixel_distance_px:.6f}\n")
        fh.write(f"mean_block_distance_px={report.mean_block_distance_px:.6f}\n")
        fh.write(f"mean_angle_error_deg={report.mean_angle_error_deg:.6f}\n")
        fh.write(f"visibility_confusions={report.visibility_confusions}\n")
        if report.weight_bytes is not None:
            fh.write(f"weight_bytes={report.weight_bytes}\n")


def emit_heatmap(samples: list[Sample], path, width: int = 157,
                 height: int = 90, label_scale: float = 1.0) -> None:
    """CSV grid of visible-label counts per ROI pixel."""
    counts = np.zeros((height, width), dtype=np.int64)
    for s in samples:
        if not s.visible:
            continue
        x = int(s.x * label_scale)
        y = int(s.y * label_scale)
        if 0 <= x < width and 0 <= y < height:
            counts[y, x] += 1
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        for row in counts:
            writer.writerow([int(v) for v in row])
