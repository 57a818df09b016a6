"""Sample containers."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..engine import Tensor
from .modality import normalize

IGNORE = 255


@dataclass
class Sample:
    """One scene: rgb (3, H, W) in [0, 1], x (1|2, H, W) in [0, 1], label (H, W) uint8."""

    rgb: np.ndarray
    x: np.ndarray
    label: np.ndarray

    def __post_init__(self):
        h, w = self.label.shape
        if self.rgb.shape != (3, h, w) or self.x.ndim != 3 or self.x.shape[1:] != (h, w):
            raise ValueError(
                f"sample parts disagree: rgb {self.rgb.shape}, x {self.x.shape}, label {self.label.shape}"
            )


@dataclass
class SampleBatch:
    """Normalized network inputs plus integer labels (N, H, W) with 255 = ignore."""

    rgb: Tensor
    x: Tensor
    labels: np.ndarray

    def __len__(self) -> int:
        return self.labels.shape[0]


def collate(samples: Sequence[Sample], **norm) -> SampleBatch:
    """Stack and normalize samples into a batch."""
    if not samples:
        raise ValueError("cannot collate an empty list of samples")
    rgb = np.stack([s.rgb for s in samples])
    x = np.stack([s.x for s in samples])
    labels = np.stack([s.label for s in samples]).astype(np.int64)
    rgb, x = normalize(rgb, x, **norm)
    return SampleBatch(Tensor(rgb), Tensor(x), labels)
