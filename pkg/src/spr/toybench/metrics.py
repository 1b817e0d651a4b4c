"""Confusion matrix, per-class IoU and mIoU for pixel predictions."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..numerics import IGNORE


@dataclass
class Metrics:
    confusion: np.ndarray
    per_class_iou: np.ndarray
    miou: float
    loss_trace: list = field(default_factory=list)

    @property
    def accuracy(self) -> float:
        total = self.confusion.sum()
        return float(np.trace(self.confusion) / total) if total else float("nan")

    def to_dict(self) -> dict:
        return {
            "confusion": self.confusion.tolist(),
            # classes with 0/0 IoU are excluded and reported as null
            "per_class_iou": [None if np.isnan(v) else float(v) for v in self.per_class_iou],
            "miou": self.miou,
            "accuracy": self.accuracy,
            "loss_trace": [r.to_dict() for r in self.loss_trace],
        }


def confusion_matrix(pred, gt, num_classes: int) -> np.ndarray:
    """Rows are ground truth, columns predictions. IGNORE pixels are skipped."""
    pred = np.asarray(pred, dtype=np.int64).reshape(-1)
    gt = np.asarray(gt, dtype=np.int64).reshape(-1)
    keep = gt != IGNORE
    idx = num_classes * gt[keep] + pred[keep]
    return np.bincount(idx, minlength=num_classes ** 2).reshape(num_classes, num_classes)


def iou_from_confusion(confusion):
    """Per-class IoU (NaN where TP+FP+FN = 0) and mIoU over classes present in GT."""
    confusion = np.asarray(confusion, dtype=np.float64)
    tp = np.diag(confusion)
    fp = confusion.sum(axis=0) - tp
    fn = confusion.sum(axis=1) - tp
    denom = tp + fp + fn
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(denom > 0, tp / np.where(denom > 0, denom, 1), np.nan)
    present = confusion.sum(axis=1) > 0
    miou = float(iou[present].mean()) if present.any() else float("nan")
    return iou, miou


def metrics_from_predictions(pred, gt, num_classes: int) -> Metrics:
    conf = confusion_matrix(pred, gt, num_classes)
    iou, miou = iou_from_confusion(conf)
    return Metrics(conf, iou, miou)
