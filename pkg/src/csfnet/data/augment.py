"""Training-time augmentation applied jointly to rgb, x and labels."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..engine import Tensor, bilinear_resize, no_grad
from .modality import LUMA
from .sample import IGNORE, Sample


@dataclass(frozen=True)
class AugmentPolicy:
    hflip_p: float = 0.5
    scale_range: tuple[float, float] = (0.5, 1.75)
    # (width, height); None keeps the input size
    crop: Optional[tuple[int, int]] = None
    # brightness, contrast and saturation factors are drawn from [1 - j, 1 + j]
    jitter: float = 0.2

    @classmethod
    def identity(cls) -> "AugmentPolicy":
        return cls(hflip_p=0.0, scale_range=(1.0, 1.0), crop=None, jitter=0.0)


def hflip(s: Sample) -> Sample:
    return Sample(s.rgb[:, :, ::-1].copy(), s.x[:, :, ::-1].copy(), s.label[:, ::-1].copy())


def _resize_image(a: np.ndarray, h: int, w: int) -> np.ndarray:
    with no_grad():
        return bilinear_resize(Tensor(a[None]), h, w).data[0]


def nearest_indices(in_size: int, out_size: int) -> np.ndarray:
    """Source index of each output index under half-pixel centers."""
    src = np.floor((np.arange(out_size) + 0.5) * in_size / out_size).astype(np.int64)
    return np.minimum(src, in_size - 1)


def rescale(s: Sample, factor: float) -> Sample:
    """Bilinear for images, nearest for labels."""
    h, w = s.label.shape
    nh, nw = max(1, round(h * factor)), max(1, round(w * factor))
    if (nh, nw) == (h, w):
        return s
    label = s.label[nearest_indices(h, nh)][:, nearest_indices(w, nw)]
    return Sample(_resize_image(s.rgb, nh, nw), _resize_image(s.x, nh, nw), label)


def crop(s: Sample, size: tuple[int, int], top: int, left: int) -> Sample:
    """Crop (width, height) at (top, left) after padding bottom/right.

    Images are padded with 0 and labels with the ignore value.
    """
    cw, ch = size
    h, w = s.label.shape
    ph, pw = max(ch, h), max(cw, w)
    if (ph, pw) != (h, w):
        rgb = np.zeros((3, ph, pw), np.float32)
        x = np.zeros((s.x.shape[0], ph, pw), np.float32)
        label = np.full((ph, pw), IGNORE, np.uint8)
        rgb[:, :h, :w], x[:, :h, :w], label[:h, :w] = s.rgb, s.x, s.label
        s = Sample(rgb, x, label)
    sl = (slice(top, top + ch), slice(left, left + cw))
    return Sample(s.rgb[:, sl[0], sl[1]].copy(), s.x[:, sl[0], sl[1]].copy(), s.label[sl].copy())


def color_jitter(rgb: np.ndarray, brightness: float, contrast: float, saturation: float) -> np.ndarray:
    out = rgb
    if brightness != 1.0:
        out = out * np.float32(brightness)
    if contrast != 1.0:
        m = np.float32((LUMA[:, None, None] * out).sum(0).mean())
        out = (out - m) * np.float32(contrast) + m
    if saturation != 1.0:
        g = (LUMA[:, None, None] * out).sum(0, keepdims=True)
        out = (out - g) * np.float32(saturation) + g
    if out is rgb:
        return rgb
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def augment(sample: Sample, rng: np.random.Generator, policy: AugmentPolicy = AugmentPolicy()) -> Sample:
    """Flip, rescale, crop and color-jitter one sample (jitter touches rgb only)."""
    s = sample
    if policy.hflip_p > 0 and rng.random() < policy.hflip_p:
        s = hflip(s)
    lo, hi = policy.scale_range
    factor = lo if lo == hi else rng.uniform(lo, hi)
    s = rescale(s, factor)
    if policy.crop is not None:
        cw, ch = policy.crop
        h, w = s.label.shape
        top = int(rng.integers(0, max(h - ch, 0) + 1))
        left = int(rng.integers(0, max(w - cw, 0) + 1))
        s = crop(s, policy.crop, top, left)
    if policy.jitter > 0:
        j = policy.jitter
        b, c, sat = rng.uniform(1 - j, 1 + j, size=3)
        s = Sample(color_jitter(s.rgb, b, c, sat), s.x, s.label)
    return s
