"""Procedural RGB-D scenes with exact labels, for toy training and tests.

Every class has a fixed base color and a fixed depth; objects are rectangles
and disks drawn over a class-0 background, later shapes covering earlier
ones. Depth is the inverse of the object's class constant plus a little noise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .modality import make_x_input, normalize_depth
from .sample import Sample


@dataclass(frozen=True)
class Shape:
    kind: str  # "rect" or "disk"
    cls: int
    cx: float
    cy: float
    a: float  # half width, or radius
    b: float  # half height (rectangles only)

    def covers(self, yy: np.ndarray, xx: np.ndarray) -> np.ndarray:
        if self.kind == "rect":
            return (np.abs(xx - self.cx) <= self.a) & (np.abs(yy - self.cy) <= self.b)
        return (xx - self.cx) ** 2 + (yy - self.cy) ** 2 <= self.a**2


def rasterize(shapes: list[Shape], h: int, w: int) -> np.ndarray:
    """Label map with pixel centers at integer coordinates."""
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    label = np.zeros((h, w), np.uint8)
    for s in shapes:
        label[s.covers(yy, xx)] = s.cls
    return label


def class_colors(num_classes: int) -> np.ndarray:
    """Well separated base colors (K, 3) in [0.1, 0.9]."""
    rng = np.random.default_rng(1234)
    hues = (np.arange(num_classes) / num_classes + rng.uniform(0, 0.02)) % 1.0
    k = np.array([5.0, 3.0, 1.0])
    rgb = 1 - np.clip(np.minimum(4 - (k + hues[:, None] * 6) % 6, (k + hues[:, None] * 6) % 6), 0, 1)
    value = np.where(np.arange(num_classes) % 2 == 0, 0.9, 0.6)[:, None]
    return (0.1 + 0.8 * rgb * value).astype(np.float32)


def class_depth(num_classes: int) -> np.ndarray:
    """Per-class distance constant; depth is its inverse."""
    return np.linspace(1.0, 4.0, num_classes)


def scene_shapes(rng: np.random.Generator, index: int, h: int, w: int, num_classes: int) -> list[Shape]:
    shapes = []
    first = 1 + index % (num_classes - 1) if num_classes > 1 else 0
    extra = int(rng.integers(1, 4))
    for j in range(1 + extra):
        cls = first if j == 0 else int(rng.integers(1, max(num_classes, 2)))
        cls = min(cls, num_classes - 1)
        kind = "rect" if rng.random() < 0.5 else "disk"
        a = rng.uniform(0.08, 0.22) * w
        b = rng.uniform(0.08, 0.22) * h
        if kind == "disk":
            a = min(a, b)
        cx, cy = rng.uniform(0.15, 0.85) * w, rng.uniform(0.15, 0.85) * h
        shapes.append(Shape(kind, cls, float(cx), float(cy), float(a), float(b)))
    # the guaranteed class goes last so nothing can cover it
    return shapes[1:] + shapes[:1]


def synth_dataset(
    seed: int, n_samples: int, size: Union[int, tuple[int, int]], num_classes: int, noise: float = 0.03
) -> list[Sample]:
    """Deterministic list of RGB-D samples; ``size`` is (width, height) or a square side."""
    w, h = (size, size) if isinstance(size, int) else size
    if w % 32 or h % 32 or w < 32 or h < 32:
        raise ValueError(f"synthetic size must be a positive multiple of 32, got {w}x{h}")
    if num_classes < 1 or n_samples < 1:
        raise ValueError("synth_dataset needs at least one sample and one class")
    rng = np.random.default_rng(seed)
    colors, dist = class_colors(num_classes), class_depth(num_classes)
    out = []
    for i in range(n_samples):
        shapes = scene_shapes(rng, i, h, w, num_classes)
        label = rasterize(shapes, h, w)
        rgb = colors[label].transpose(2, 0, 1) + rng.normal(0, noise, (3, h, w))
        rgb = np.clip(rgb, 0, 1).astype(np.float32)
        depth = 1.0 / dist[label] + rng.normal(0, noise / 4, (h, w))
        depth = normalize_depth(np.clip(depth, 1e-3, None))
        out.append(Sample(rgb, make_x_input("depth", depth, rgb), label))
    return out
