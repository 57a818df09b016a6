"""Confusion matrices, IoU and whole-dataset evaluation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .data import IGNORE, Sample, collate
from .engine import no_grad


def accumulate_confusion(
    pred: np.ndarray, label: np.ndarray, k: int, ignore: int = IGNORE,
    confusion: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Add pixel counts to a K x K matrix; rows are ground truth, columns predictions."""
    pred, label = np.asarray(pred), np.asarray(label)
    if pred.shape != label.shape:
        raise ValueError(f"prediction {pred.shape} and label {label.shape} differ in shape")
    keep = label != ignore
    p, g = pred[keep].astype(np.int64), label[keep].astype(np.int64)
    if p.size and (p.min() < 0 or p.max() >= k):
        raise ValueError(f"prediction values must be in 0..{k - 1}, found {p.min()}..{p.max()}")
    if g.size and (g.min() < 0 or g.max() >= k):
        raise ValueError(f"label values must be in 0..{k - 1} or {ignore}, found {g.min()}..{g.max()}")
    counts = np.bincount(g * k + p, minlength=k * k).reshape(k, k)
    if confusion is None:
        return counts
    confusion += counts
    return confusion


@dataclass
class EvalReport:
    confusion: np.ndarray
    per_class_iou: np.ndarray  # NaN marks classes absent from truth and prediction
    miou: float

    @property
    def pixel_accuracy(self) -> float:
        total = self.confusion.sum()
        return float(np.trace(self.confusion) / total) if total else float("nan")

    def format(self, names: Optional[Sequence[str]] = None) -> str:
        lines = []
        for c, v in enumerate(self.per_class_iou):
            name = names[c] if names else f"class {c}"
            lines.append(f"{name:>12}  {'-' if np.isnan(v) else f'{v:.4f}'}")
        lines.append(f"{'mIoU':>12}  {self.miou:.4f}")
        lines.append(f"{'pixel acc':>12}  {self.pixel_accuracy:.4f}")
        return "\n".join(lines)


def report(confusion: np.ndarray) -> EvalReport:
    """IoU = TP / (TP + FP + FN); mIoU averages the classes that occur at all."""
    c = np.asarray(confusion, dtype=np.float64)
    tp = np.diag(c)
    union = c.sum(0) + c.sum(1) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(union > 0, tp / union, np.nan)
    present = ~np.isnan(iou)
    miou = float(iou[present].mean()) if present.any() else float("nan")
    return EvalReport(np.asarray(confusion, dtype=np.int64), iou, miou)


def predict(net, samples: Sequence[Sample], batch_size: int = 4) -> Iterable[np.ndarray]:
    """Arg-max class maps (H, W), one per sample, in eval mode."""
    net.eval()
    with no_grad():
        for i in range(0, len(samples), batch_size):
            chunk = samples[i : i + batch_size]
            batch = collate(chunk)
            logits = net(batch.rgb, batch.x).data
            yield from logits.argmax(axis=1).astype(np.uint8)


def evaluate(net, samples: Sequence[Sample], num_classes: int, batch_size: int = 4) -> EvalReport:
    conf = np.zeros((num_classes, num_classes), np.int64)
    for s, pred in zip(samples, predict(net, samples, batch_size)):
        accumulate_confusion(pred, s.label, num_classes, confusion=conf)
    return report(conf)
