"""Tolerant segmentation metrics.

Confusion counts are computed after dilating the reference mask with a
Euclidean disc so near-boundary predictions within the tolerance radius are
not penalized. The tolerance is symmetric: the ground truth is dilated for
precision, the prediction is dilated for recall.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage


@dataclass(frozen=True)
class TolerantCounts:
    tp: int
    fp: int
    fn: int
    radius: float

    def validate(self) -> None:
        if self.tp < 0 or self.fp < 0 or self.fn < 0:
            raise ValueError(f"counts must be >= 0, got tp={self.tp} fp={self.fp} fn={self.fn}")
        if self.radius < 0:
            raise ValueError(f"radius must be >= 0, got {self.radius}")


@dataclass
class MetricsReport:
    f1: float       # from dataset-summed counts
    iou: float      # from dataset-summed counts
    dice: float     # mean of per-image dice values
    per_image: list[tuple[float, float, float]]
    aggregate: tuple[float, float, float]


def disc_structure(radius: float) -> np.ndarray:
    """Structuring element containing offsets with dy^2 + dx^2 <= radius^2."""
    r = int(math.floor(radius))
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    return yy * yy + xx * xx <= radius * radius


def dilate_disc(mask: np.ndarray, radius: float) -> np.ndarray:
    """All pixels within Euclidean distance radius of any set pixel."""
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    mask = np.asarray(mask, dtype=bool)
    if radius < 1:
        return mask.copy()
    return ndimage.binary_dilation(mask, structure=disc_structure(radius))


def tolerant_counts(pred: np.ndarray, gt: np.ndarray, radius: float) -> TolerantCounts:
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"tolerant_counts: shape mismatch {pred.shape} vs {gt.shape}")
    gt_dil = dilate_disc(gt, radius)
    pred_dil = dilate_disc(pred, radius)
    tp = int((pred & gt_dil).sum())
    fp = int((pred & ~gt_dil).sum())
    fn = int((gt & ~pred_dil).sum())
    return TolerantCounts(tp, fp, fn, radius)


def _triple(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    if tp + fp + fn == 0:
        return 1.0, 1.0, 1.0
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    iou = tp / (tp + fp + fn)
    dice = 2 * tp / (2 * tp + fp + fn)
    return f1, iou, dice


def precision_recall(counts: Sequence[TolerantCounts]) -> tuple[float, float]:
    """Precision/recall from summed counts; 0 on empty denominators."""
    tp = sum(c.tp for c in counts)
    fp = sum(c.fp for c in counts)
    fn = sum(c.fn for c in counts)
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    return precision, recall


def compute_metrics(counts: TolerantCounts | Sequence[TolerantCounts]) -> MetricsReport:
    """Per-image triples plus a dataset aggregate.

    The headline f1/iou come from dataset-summed counts; the headline dice is
    the per-image mean, matching the customary pairing of the two columns.
    """
    if isinstance(counts, TolerantCounts):
        counts = [counts]
    if not counts:
        raise ValueError("compute_metrics: need at least one TolerantCounts")
    for c in counts:
        c.validate()
    per_image = [_triple(c.tp, c.fp, c.fn) for c in counts]
    aggregate = _triple(sum(c.tp for c in counts),
                        sum(c.fp for c in counts),
                        sum(c.fn for c in counts))
    mean_dice = float(np.mean([t[2] for t in per_image]))
    return MetricsReport(aggregate[0], aggregate[1], mean_dice, per_image, aggregate)


def write_report(path, report: MetricsReport, counts: Sequence[TolerantCounts],
                 ids: Sequence[str]) -> None:
    """One JSON record per image (with raw counts) plus an aggregate record."""
    with open(path, "w") as fh:
        for sample_id, c, (f1, iou, dice) in zip(ids, counts, report.per_image):
            fh.write(json.dumps({
                "scope": "image", "id": sample_id,
                "tp": c.tp, "fp": c.fp, "fn": c.fn,
                "f1": f1, "iou": iou, "dice": dice,
            }) + "\n")
        fh.write(json.dumps({
            "scope": "aggregate",
            "tp": sum(c.tp for c in counts),
            "fp": sum(c.fp for c in counts),
            "fn": sum(c.fn for c in counts),
            "f1": report.f1, "iou": report.iou, "dice": report.dice,
        }) + "\n")


def read_report(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line]
