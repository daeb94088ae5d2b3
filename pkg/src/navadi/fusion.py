"""Feature fusion and multi-task loss combination as plain array math."""

from __future__ import annotations

import math

import numpy as np

from .errors import EmptyTaskSet, ShapeMismatch


def fuse(f_rgb: np.ndarray, f_lidar: np.ndarray, alpha: float = 1.0) -> np.ndarray:
    """Elementwise f_rgb + alpha * f_lidar; alpha = 0 returns f_rgb bit-exactly."""
    f_rgb = np.asarray(f_rgb)
    f_lidar = np.asarray(f_lidar)
    if f_rgb.shape != f_lidar.shape:
        raise ShapeMismatch(f"{f_rgb.shape} vs {f_lidar.shape}")
    if alpha == 0.0:
        return f_rgb.copy()
    return f_rgb + alpha * f_lidar


def combine_losses(losses) -> float:
    """Weighted sum over (task_id, loss, weight) triples.

    Losses must be non-negative and weights strictly positive.
    """
    losses = list(losses)
    if not losses:
        raise EmptyTaskSet("at least one task is required")
    total = 0.0
    for task_id, loss, weight in losses:
        if not (math.isfinite(loss) and math.isfinite(weight)):
            raise ValueError(f"non-finite entry for task {task_id!r}")
        if loss < 0.0:
            raise ValueError(f"negative loss for task {task_id!r}")
        if weight <= 0.0:
            raise ValueError(f"non-positive weight for task {task_id!r}")
        total += weight * loss
    return total
