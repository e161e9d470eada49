"""Confusion-matrix based per-class IoU and mean IoU."""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from fre_seg.errors import LabelError, ShapeError


@dataclass(frozen=True)
class ConfusionMatrix:
    """C x C pixel counts; rows are ground truth, columns are predictions."""

    counts: np.ndarray

    @classmethod
    def zeros(cls, classes: int) -> "ConfusionMatrix":
        return cls(np.zeros((classes, classes), dtype=np.int64))

    @property
    def classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.classes != self.classes:
            raise ShapeError("merge", "classes", f"{self.classes} != {other.classes}")
        return ConfusionMatrix(self.counts + other.counts)

    __add__ = merge


def accumulate(cm: ConfusionMatrix, pred: np.ndarray, gt: np.ndarray) -> ConfusionMatrix:
    """Return `cm` with cm[g][p] incremented once per pixel."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeError("accumulate", "labels", f"prediction {pred.shape} != ground truth {gt.shape}")
    n = cm.classes
    for name, labels in (("ground truth", gt), ("prediction", pred)):
        bad = labels[(labels < 0) | (labels >= n)]
        if bad.size:
            raise LabelError(f"{name} label {int(bad.flat[0])} outside [0, {n})", value=int(bad.flat[0]))
    flat = n * gt.astype(np.int64).ravel() + pred.astype(np.int64).ravel()
    counts = np.bincount(flat, minlength=n * n).reshape(n, n)
    return ConfusionMatrix(cm.counts + counts)


@dataclass(frozen=True)
class SegMetrics:
    """Per-class IoU (None where the class is absent) and the mean over present classes."""

    per_class_iou: Tuple[Optional[float], ...]
    mean_iou: float
    pixel_accuracy: float = 0.0

    @property
    def present(self) -> List[int]:
        return [c for c, v in enumerate(self.per_class_iou) if v is not None]

    def to_row(self, class_names: Sequence[str]) -> Dict[str, str]:
        """Flat CSV row with one iou_<class> column per class plus miou."""
        row = {f"iou_{name}": "" if v is None else repr(v) for name, v in zip(class_names, self.per_class_iou)}
        row["miou"] = repr(self.mean_iou)
        return row

    def percent_row(self) -> List[str]:
        """Per-class IoU and mIoU in percent, as printed in the comparison tables."""
        cells = ["-" if v is None else format_percent(v) for v in self.per_class_iou]
        return cells + [format_percent(self.mean_iou)]


def iou(cm: ConfusionMatrix) -> SegMetrics:
    """IoU_c = cm[c][c] / (row_c + col_c - cm[c][c]); a zero denominator marks the class absent."""
    counts = cm.counts.astype(np.int64)
    inter = np.diag(counts)
    union = counts.sum(axis=1) + counts.sum(axis=0) - inter

    per_class: List[Optional[float]] = []
    for c in range(cm.classes):
        per_class.append(None if union[c] == 0 else float(inter[c]) / float(union[c]))
    present = [v for v in per_class if v is not None]
    mean = float(np.mean(present)) if present else 0.0
    accuracy = float(inter.sum()) / cm.total if cm.total else 0.0
    return SegMetrics(per_class_iou=tuple(per_class), mean_iou=mean, pixel_accuracy=accuracy)


def format_percent(value: float) -> str:
    """0.595 -> '59.50'."""
    return f"{100.0 * value:.2f}"


def table_header(class_names: Sequence[str]) -> List[str]:
    return [f"{name}[%]" for name in class_names] + ["mIoU[%]"]


def format_table(rows: Sequence[Tuple[str, SegMetrics]], class_names: Sequence[str]) -> List[List[str]]:
    """Comparison table rows: method label, class IoU [%] columns, mIoU [%]."""
    table = [["Method"] + table_header(class_names)]
    for label, metrics in rows:
        table.append([label] + metrics.percent_row())
    return table
