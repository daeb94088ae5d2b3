"""Pixel-level road-segmentation metrics and the scale-invariant log depth error.

All ratio metrics are returned in [0, 1]; report writers scale to percent.
Degenerate denominators map to 0.0 and the affected metric names are flagged
so batch aggregation stays total.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import NonPositiveDepth, ShapeMismatch, SingleClassWarning

EXACT_SWEEP_LIMIT = 100_000   # masked-pixel count up to which every distinct
FAST_SWEEP_THRESHOLDS = 1000  # score is a threshold; above, quantile sweep

RECALL_LEVELS = np.linspace(0.0, 1.0, 11)


@dataclass
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.fn + other.fn, self.tn + other.tn)


@dataclass
class SegmentationMetrics:
    precision: float
    recall: float
    f1: float
    fpr: float
    fnr: float
    degenerate: tuple[str, ...] = ()


def _as_mask(mask, shape) -> np.ndarray:
    if mask is None:
        return np.ones(shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != shape:
        raise ShapeMismatch(f"mask {mask.shape} vs data {shape}")
    return mask


def confusion(pred_binary, gt_binary, mask=None) -> ConfusionCounts:
    """Pixel counts over the masked region."""
    pred = np.asarray(pred_binary, dtype=bool)
    gt = np.asarray(gt_binary, dtype=bool)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"pred {pred.shape} vs gt {gt.shape}")
    m = _as_mask(mask, pred.shape)
    pred = pred[m]
    gt = gt[m]
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    tn = int(np.count_nonzero(~pred & ~gt))
    return ConfusionCounts(tp, fp, fn, tn)


def metrics_from_counts(c: ConfusionCounts) -> SegmentationMetrics:
    """PRE, REC, F1 (harmonic mean), FPR, FNR; degenerate ratios become 0."""
    degenerate = []

    def ratio(num, den, name):
        if den == 0:
            degenerate.append(name)
            return 0.0
        return num / den

    pre = ratio(c.tp, c.tp + c.fp, "precision")
    rec = ratio(c.tp, c.tp + c.fn, "recall")
    fpr = ratio(c.fp, c.fp + c.tn, "fpr")
    fnr = ratio(c.fn, c.fn + c.tp, "fnr")
    if pre + rec == 0.0:
        degenerate.append("f1")
        f1 = 0.0
    else:
        f1 = 2.0 * pre * rec / (pre + rec)
    return SegmentationMetrics(pre, rec, f1, fpr, fnr, tuple(degenerate))


def _sweep(scores: np.ndarray, gt: np.ndarray, thresholds: np.ndarray):
    """tp/fp counts for pred = (score >= threshold), per threshold."""
    order = np.argsort(scores, kind="stable")
    s_sorted = scores[order]
    gt_sorted = gt[order].astype(np.int64)
    # suffix sums: counts with score >= s_sorted[i]
    tp_suffix = np.concatenate([np.cumsum(gt_sorted[::-1])[::-1], [0]])
    fp_suffix = np.concatenate([np.cumsum((1 - gt_sorted)[::-1])[::-1], [0]])
    idx = np.searchsorted(s_sorted, thresholds, side="left")
    return tp_suffix[idx], fp_suffix[idx]


def max_f_and_ap(scores, gt_binary, mask=None) -> tuple[float, float, float]:
    """Maximum F1 over a threshold sweep, 11-point average precision, argmax threshold.

    Up to EXACT_SWEEP_LIMIT masked pixels the sweep visits every distinct
    score plus 0 and 1 (exact); beyond that, FAST_SWEEP_THRESHOLDS uniform
    score quantiles are used. AP is the mean over 11 equally spaced recall
    levels of the best precision achieved at recall >= level.
    """
    scores = np.asarray(scores, dtype=float)
    gt = np.asarray(gt_binary, dtype=bool)
    if scores.shape != gt.shape:
        raise ShapeMismatch(f"scores {scores.shape} vs gt {gt.shape}")
    m = _as_mask(mask, scores.shape)
    scores = scores[m].ravel()
    gt = gt[m].ravel()
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")

    n_pos = int(np.count_nonzero(gt))
    if n_pos == 0 or n_pos == gt.size:
        warnings.warn("ground truth contains a single class",
                      SingleClassWarning, stacklevel=2)

    if scores.size <= EXACT_SWEEP_LIMIT:
        thresholds = np.unique(np.concatenate([scores, [0.0, 1.0]]))
    else:
        qs = np.quantile(scores, np.linspace(0.0, 1.0, FAST_SWEEP_THRESHOLDS))
        thresholds = np.unique(np.concatenate([qs, [0.0, 1.0]]))

    tp, fp = _sweep(scores, gt, thresholds)
    with np.errstate(divide="ignore", invalid="ignore"):
        prec = np.where(tp + fp > 0, tp / np.maximum(tp + fp, 1), 0.0)
        rec = (tp / n_pos) if n_pos > 0 else np.zeros_like(prec)
        denom = prec + rec
        f1 = np.where(denom > 0, 2.0 * prec * rec / np.where(denom > 0, denom, 1.0), 0.0)

    best = int(np.argmax(f1))
    max_f = float(f1[best])
    best_threshold = float(thresholds[best])

    ap_terms = []
    for level in RECALL_LEVELS:
        ok = rec >= level
        ap_terms.append(float(prec[ok].max()) if np.any(ok) else 0.0)
    ap = sum(ap_terms) / len(ap_terms)
    return max_f, ap, best_threshold


def silog(pred_depth, gt_depth, mask=None) -> float:
    """Scale-invariant log error: 100 * [(1/n) sum d^2 - (1/n^2) (sum d)^2],
    d = ln(pred) - ln(gt)."""
    pred = np.asarray(pred_depth, dtype=float)
    gt = np.asarray(gt_depth, dtype=float)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"pred {pred.shape} vs gt {gt.shape}")
    m = _as_mask(mask, pred.shape)
    pred = pred[m].ravel()
    gt = gt[m].ravel()
    if pred.size == 0:
        raise ValueError("empty evaluation mask")
    if np.any(pred <= 0.0) or np.any(gt <= 0.0):
        raise NonPositiveDepth("depths must be strictly positive on the mask")
    d = np.log(pred) - np.log(gt)
    n = d.size
    return 100.0 * (float(np.sum(d * d)) / n - (float(np.sum(d)) / n) ** 2)
