"""Confusion-matrix engine and the derived binary/semantic change metrics.

Binary metrics collapse all change classes into a single foreground before
computing precision/recall/F1/IoU/OA. Semantic metrics keep the full
matrix: class-diagonal F1 over change classes, mean change-class IoU, and
an exponentially IoU-weighted kappa computed with the no-change cell
zeroed. Degenerate 0/0 ratios resolve to 0 and are flagged, never NaN.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .types import IGNORE_LABEL


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # (K, K) int64, rows = ground truth, cols = prediction

    @classmethod
    def empty(cls, num_classes: int) -> "ConfusionMatrix":
        return cls(counts=np.zeros((num_classes, num_classes), dtype=np.int64))

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        """Elementwise sum; shards reduce associatively."""
        return ConfusionMatrix(counts=self.counts + other.counts)

    def binarized(self) -> "ConfusionMatrix":
        """Collapse to 2x2 change/no-change counts."""
        c = self.counts
        out = np.array(
            [[c[0, 0], c[0, 1:].sum()], [c[1:, 0].sum(), c[1:, 1:].sum()]],
            dtype=np.int64,
        )
        return ConfusionMatrix(counts=out)


def accumulate(cm: ConfusionMatrix, pred: np.ndarray, gt: np.ndarray) -> ConfusionMatrix:
    """Add one prediction/label pair into the matrix; 255 pixels are skipped."""
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    k = cm.num_classes
    valid = gt != IGNORE_LABEL
    p = pred[valid].ravel()
    g = gt[valid].ravel()
    bad = np.flatnonzero((p < 0) | (p >= k))
    if bad.size:
        flat_idx = np.flatnonzero(valid.ravel())[bad[0]]
        raise ValueError(
            f"prediction value {int(p[bad[0]])} out of range [0,{k - 1}] "
            f"at flat pixel {int(flat_idx)}"
        )
    cm.counts += np.bincount(g * k + p, minlength=k * k).reshape(k, k)
    return cm


@dataclass
class BinaryMetrics:
    precision: float
    recall: float
    f1: float
    iou: float
    oa: float
    degenerate: List[str] = field(default_factory=list)


def _ratio(num: float, den: float, name: str, flags: List[str]) -> float:
    if den == 0:
        flags.append(name)
        return 0.0
    return num / den


def binary_metrics(cm: ConfusionMatrix) -> BinaryMetrics:
    """Precision/recall/F1/IoU/OA of the binarized matrix."""
    if cm.total == 0:
        raise ValueError("cannot compute metrics from an empty confusion matrix")
    b = cm.binarized().counts if cm.num_classes != 2 else cm.counts
    tn, fp = int(b[0, 0]), int(b[0, 1])
    fn, tp = int(b[1, 0]), int(b[1, 1])
    flags: List[str] = []
    precision = _ratio(tp, tp + fp, "precision", flags)
    recall = _ratio(tp, tp + fn, "recall", flags)
    f1 = _ratio(2 * precision * recall, precision + recall, "f1", flags)
    iou = _ratio(tp, tp + fp + fn, "iou", flags)
    oa = (tp + tn) / (tp + tn + fp + fn)
    return BinaryMetrics(precision, recall, f1, iou, oa, flags)


@dataclass
class ScdMetrics:
    fscd: float
    sek: float
    scd_iou_mean: float
    degenerate: List[str] = field(default_factory=list)


def scd_metrics(cm: ConfusionMatrix) -> ScdMetrics:
    """Semantic change metrics from the full K-class matrix."""
    if cm.num_classes < 2:
        raise ValueError("semantic metrics need at least 2 classes")
    c = cm.counts.astype(np.float64)
    rows = c.sum(axis=1)
    cols = c.sum(axis=0)
    flags: List[str] = []

    sem_tp = float(np.trace(c)) - float(c[0, 0])
    sem_precision = _ratio(sem_tp, float(cols[1:].sum()), "fscd_precision", flags)
    sem_recall = _ratio(sem_tp, float(rows[1:].sum()), "fscd_recall", flags)
    fscd = _ratio(2 * sem_precision * sem_recall, sem_precision + sem_recall, "fscd", flags)

    ious = []
    for k in range(1, cm.num_classes):
        denom = rows[k] + cols[k] - c[k, k]
        if denom == 0:
            flags.append(f"iou_class_{k}")
            continue
        ious.append(c[k, k] / denom)
    scd_iou_mean = float(np.mean(ious)) if ious else 0.0
    if not ious:
        flags.append("scd_iou_mean")

    # kappa on the matrix with the no-change diagonal cell removed,
    # weighted by exp(binary change IoU - 1)
    q = c.copy()
    q[0, 0] = 0.0
    n = q.sum()
    if n == 0:
        flags.append("sek")
        sek = 0.0
    else:
        po = np.trace(q) / n
        pe = float(q.sum(axis=1) @ q.sum(axis=0)) / (n * n)
        if pe >= 1.0:
            flags.append("sek_pe")
            kappa = 0.0
        else:
            kappa = (po - pe) / (1.0 - pe)
        iou_change = binary_metrics(cm).iou
        sek = float(np.exp(iou_change - 1.0) * kappa)

    return ScdMetrics(fscd, sek, scd_iou_mean, flags)


@dataclass
class MetricsReport:
    precision: float
    recall: float
    f1: float
    iou: float
    oa: float
    fscd: Optional[float] = None
    sek: Optional[float] = None
    scd_iou_mean: Optional[float] = None
    degenerate_flags: List[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {
                "precision": self.precision,
                "recall": self.recall,
                "f1": self.f1,
                "iou": self.iou,
                "oa": self.oa,
                "fscd": self.fscd,
                "sek": self.sek,
                "scd_iou_mean": self.scd_iou_mean,
                "degenerate_flags": self.degenerate_flags,
            },
            indent=1,
        )


def build_report(cm: ConfusionMatrix, semantic: bool = True) -> MetricsReport:
    binary = binary_metrics(cm)
    report = MetricsReport(
        precision=binary.precision,
        recall=binary.recall,
        f1=binary.f1,
        iou=binary.iou,
        oa=binary.oa,
        degenerate_flags=list(binary.degenerate),
    )
    if semantic and cm.num_classes > 2:
        scd = scd_metrics(cm)
        report.fscd = scd.fscd
        report.sek = scd.sek
        report.scd_iou_mean = scd.scd_iou_mean
        report.degenerate_flags.extend(scd.degenerate)
    return report
