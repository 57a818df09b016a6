"""Building network inputs from raw captures."""

from __future__ import annotations

from typing import Sequence

import numpy as np

# BT.601 luma weights
LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float32)
MODALITIES = {"depth": 2, "thermal": 1, "aolp": 1}


def _as_f32(a) -> np.ndarray:
    return np.asarray(a, dtype=np.float32)


def compute_aolp(i0, i45, i90, i135, scaled: bool = True) -> np.ndarray:
    """Angle of linear polarization from four polarizer captures.

    S1 = I0 - I90, S2 = I45 - I135 and the angle is 0.5 * atan2(S1, S2) in
    [-pi/2, pi/2]. With ``scaled`` the angle is mapped linearly to [0, 1].
    """
    maps = [np.asarray(m, dtype=np.float64) for m in (i0, i45, i90, i135)]
    if any(m.shape != maps[0].shape for m in maps) or maps[0].ndim != 2:
        raise ValueError(f"AoLP needs four equal (H, W) maps, got {[m.shape for m in maps]}")
    s1 = maps[0] - maps[2]
    s2 = maps[1] - maps[3]
    angle = 0.5 * np.arctan2(s1, s2)
    if not scaled:
        return angle.astype(np.float32)
    return ((angle + np.pi / 2) / np.pi).astype(np.float32)


def luminance(rgb) -> np.ndarray:
    """Y channel (1, H, W) of a (3, H, W) image."""
    rgb = _as_f32(rgb)
    if rgb.ndim != 3 or rgb.shape[0] != 3:
        raise ValueError(f"luminance needs a (3, H, W) image, got {rgb.shape}")
    y = LUMA[0] * rgb[0] + LUMA[1] * rgb[1] + LUMA[2] * rgb[2]
    return y[None]


def normalize_depth(depth) -> np.ndarray:
    """Min-max scale valid (non-zero) depth to [0, 1]; missing pixels stay 0.

    A map whose valid pixels all share one value becomes 1 there.
    """
    d = _as_f32(depth)
    valid = d > 0
    out = np.zeros_like(d)
    if not valid.any():
        return out
    lo, hi = d[valid].min(), d[valid].max()
    out[valid] = (d[valid] - lo) / (hi - lo) if hi > lo else 1.0
    return out


def make_x_input(modality: str, raw, rgb) -> np.ndarray:
    """X-branch input: (luminance, depth) for depth, the raw map otherwise.

    ``raw`` is an (H, W) or (1, H, W) map already scaled to [0, 1].
    """
    if modality not in MODALITIES:
        raise ValueError(f"unknown modality {modality!r}; expected one of {sorted(MODALITIES)}")
    raw = _as_f32(raw)
    if raw.ndim == 3 and raw.shape[0] == 1:
        raw = raw[0]
    rgb = _as_f32(rgb)
    if raw.ndim != 2 or rgb.shape[1:] != raw.shape:
        raise ValueError(f"{modality} map {raw.shape} does not match image {rgb.shape}")
    if modality == "depth":
        return np.concatenate([luminance(rgb), raw[None]], axis=0)
    return raw[None].copy()


def normalize(
    rgb, x, mean: Sequence[float] = (0.5, 0.5, 0.5), std: Sequence[float] = (0.5, 0.5, 0.5),
    x_mean: Sequence[float] | float = 0.5, x_std: Sequence[float] | float = 0.5,
) -> tuple[np.ndarray, np.ndarray]:
    """(v - mean) / std per channel; the channel axis is third from the end."""
    def apply(a, m, s):
        a = _as_f32(a)
        c = a.shape[-3]
        m = np.broadcast_to(np.asarray(m, np.float32), (c,)).reshape(c, 1, 1)
        s = np.broadcast_to(np.asarray(s, np.float32), (c,)).reshape(c, 1, 1)
        if np.any(s <= 0):
            raise ValueError("normalization std must be positive")
        return (a - m) / s

    return apply(rgb, mean, std), apply(x, x_mean, x_std)
