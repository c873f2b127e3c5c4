"""Confusion matrices, per-class IoU and mIoU."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, LabelOutOfRange, NoPresentClasses

VOC_IGNORE_INDEX = 255


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are ground truth, columns prediction."""

    counts: np.ndarray
    ignore_count: int = 0

    @classmethod
    def empty(cls, k):
        return cls(np.zeros((k, k), dtype=np.int64), 0)

    @property
    def k(self):
        return self.counts.shape[0]

    @property
    def total(self):
        return int(self.counts.sum()) + self.ignore_count

    def __add__(self, other):
        if self.k != other.k:
            raise DimensionMismatch("cannot add confusion matrices of different size")
        return ConfusionMatrix(self.counts + other.counts, self.ignore_count + other.ignore_count)


def _raw(label_map):
    return np.asarray(getattr(label_map, "data", label_map))


def accumulate(cm, gt, pred, ignore_index=VOC_IGNORE_INDEX):
    """Return ``cm`` plus the pixel counts of one (gt, pred) pair."""
    g = _raw(gt).astype(np.int64).ravel()
    p = _raw(pred).astype(np.int64).ravel()
    if _raw(gt).shape != _raw(pred).shape:
        raise DimensionMismatch(f"gt {_raw(gt).shape} vs pred {_raw(pred).shape}")
    keep = np.ones(g.shape, dtype=bool) if ignore_index is None else g != ignore_index
    ignored = int(g.size - keep.sum())
    g, p = g[keep], p[keep]
    k = cm.k
    if g.size and (g.min() < 0 or g.max() >= k or p.min() < 0 or p.max() >= k):
        raise LabelOutOfRange(f"labels must lie in [0, {k})")
    counts = np.bincount(g * k + p, minlength=k * k).reshape(k, k)
    return ConfusionMatrix(cm.counts + counts, cm.ignore_count + ignored)


def iou_per_class(cm):
    """IoU per class; NaN marks classes absent from both gt and prediction."""
    counts = cm.counts.astype(np.float64)
    tp = np.diag(counts)
    union = counts.sum(axis=1) + counts.sum(axis=0) - tp
    iou = np.full(cm.k, np.nan)
    present = union > 0
    iou[present] = tp[present] / union[present]
    return iou


def mean_of_present(iou):
    """Arithmetic mean over the non-NaN entries."""
    iou = np.asarray(iou, dtype=np.float64)
    present = ~np.isnan(iou)
    if not present.any():
        raise NoPresentClasses("no class occurs in ground truth or prediction")
    return float(iou[present].mean())


def mean_iou(cm):
    return mean_of_present(iou_per_class(cm))


def format_report(cm):
    """``class<TAB>iou`` lines, then ``mIoU<TAB>value``; 4 decimals, ``nan`` if absent."""
    lines = []
    for c, v in enumerate(iou_per_class(cm)):
        lines.append(f"{c}\t{'nan' if np.isnan(v) else f'{v:.4f}'}")
    lines.append(f"mIoU\t{mean_iou(cm):.4f}")
    return "\n".join(lines) + "\n"
