"""Colorized rendering of prediction maps."""

from __future__ import annotations

import numpy as np

from .types import IGNORE_LABEL, ClassTaxonomy

# binary difference legend: TP white, FP red, FN blue, TN black
_DIFF_COLORS = {
    "tp": (255, 255, 255),
    "fp": (255, 0, 0),
    "fn": (0, 0, 255),
    "tn": (0, 0, 0),
}


def render_prediction(
    pred: np.ndarray,
    taxonomy: ClassTaxonomy,
    mode: str = "classes",
    gt: np.ndarray | None = None,
) -> np.ndarray:
    """Render a class-id map to an (H, W, 3) uint8 image.

    mode "classes" paints each class with its taxonomy color. mode
    "binary_diff" compares against `gt` after binarizing and paints
    TP/FP/FN/TN white/red/blue/black; ignored pixels go black.
    """
    if mode == "classes":
        lut = taxonomy.color_lut()
        safe = np.where(pred == IGNORE_LABEL, 0, pred)
        return lut[safe]

    if mode == "binary_diff":
        if gt is None:
            raise ValueError("binary_diff rendering requires the ground truth")
        pred_change = pred >= 1
        gt_change = (gt >= 1) & (gt != IGNORE_LABEL)
        out = np.zeros((*pred.shape, 3), dtype=np.uint8)
        out[pred_change & gt_change] = _DIFF_COLORS["tp"]
        out[pred_change & ~gt_change] = _DIFF_COLORS["fp"]
        out[~pred_change & gt_change] = _DIFF_COLORS["fn"]
        out[gt == IGNORE_LABEL] = _DIFF_COLORS["tn"]
        return out

    raise ValueError(f"unknown render mode {mode!r}")
