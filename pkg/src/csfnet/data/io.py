"""Image, label and prediction files (PNG, PGM and anything Pillow reads)."""

from __future__ import annotations

import os
from typing import Optional, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

PathLike = Union[str, os.PathLike]


class DataError(ValueError):
    """A file that cannot be read or has the wrong format."""


def _open(path: PathLike) -> Image.Image:
    try:
        img = Image.open(path)
        img.load()
        return img
    except FileNotFoundError as e:
        raise DataError(f"{path}: no such file") from e
    except (OSError, UnidentifiedImageError) as e:
        raise DataError(f"{path}: unreadable image ({e})") from e


def load_image(path: PathLike) -> np.ndarray:
    """RGB image as float32 (3, H, W) in [0, 1]."""
    img = _open(path).convert("RGB")
    return np.asarray(img, dtype=np.float32).transpose(2, 0, 1) / np.float32(255)


def load_gray(path: PathLike) -> np.ndarray:
    """Single-channel map (H, W) scaled to [0, 1] by its bit depth."""
    img = _open(path)
    if img.mode in ("I;16", "I;16B", "I;16L", "I"):
        a = np.asarray(img, dtype=np.float64)
        scale = 65535.0
    elif img.mode in ("L", "P", "1"):
        a = np.asarray(img.convert("L"), dtype=np.float64)
        scale = 255.0
    else:
        raise DataError(f"{path}: expected a single-channel image, got mode {img.mode}")
    return (np.clip(a, 0, scale) / scale).astype(np.float32)


def load_label(path: PathLike) -> np.ndarray:
    """8-bit single-channel class map (H, W) as uint8."""
    img = _open(path)
    if img.mode not in ("L", "P"):
        raise DataError(f"{path}: label must be 8-bit single channel, got mode {img.mode}")
    return np.asarray(img, dtype=np.uint8).copy()


def save_label(label: np.ndarray, path: PathLike) -> None:
    Image.fromarray(_as_u8(label, path)).save(path)


def save_gray_png(values: np.ndarray, path: PathLike) -> None:
    """Write a [0, 1] map as 8-bit grayscale PNG."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    Image.fromarray(np.rint(v * 255).astype(np.uint8)).save(path, format="PNG")


def _as_u8(a: np.ndarray, path) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim != 2 or a.min(initial=0) < 0 or a.max(initial=0) > 255:
        raise DataError(f"{path}: class map must be (H, W) with values in 0..255")
    return a.astype(np.uint8)


def default_palette(n: int = 256) -> np.ndarray:
    """Deterministic bit-interleaved palette (class 0 black), shape (n, 3)."""
    pal = np.zeros((n, 3), np.uint8)
    for i in range(n):
        c, r, g, b = i, 0, 0, 0
        for j in range(8):
            r |= ((c >> 0) & 1) << (7 - j)
            g |= ((c >> 1) & 1) << (7 - j)
            b |= ((c >> 2) & 1) << (7 - j)
            c >>= 3
        pal[i] = (r, g, b)
    return pal


def load_palette(path: PathLike) -> np.ndarray:
    """Text palette: one ``r g b`` line per class, ``#`` comments allowed."""
    rows = []
    try:
        with open(path, encoding="utf-8") as f:
            lines = f.readlines()
    except OSError as e:
        raise DataError(f"{path}: cannot read palette ({e.strerror})") from e
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        try:
            rgb = [int(p) for p in parts]
        except ValueError:
            rgb = []
        if len(rgb) != 3 or not all(0 <= v <= 255 for v in rgb):
            raise DataError(f"{path}:{n}: expected three integers in 0..255")
        rows.append(rgb)
    if not rows:
        raise DataError(f"{path}: palette is empty")
    return np.array(rows, np.uint8)


def save_prediction(
    pred: np.ndarray,
    png_path: Optional[PathLike] = None,
    pgm_path: Optional[PathLike] = None,
    palette: Optional[np.ndarray] = None,
) -> None:
    """Write a class map as indexed-color PNG and/or raw 8-bit PGM (P5)."""
    pred = _as_u8(pred, png_path or pgm_path)
    if png_path is not None:
        pal = default_palette() if palette is None else np.asarray(palette, np.uint8)
        if pred.max(initial=0) >= len(pal):
            raise DataError(f"{png_path}: palette has {len(pal)} colors, class {pred.max()} needs more")
        img = Image.frombytes("P", (pred.shape[1], pred.shape[0]), pred.tobytes())
        flat = np.zeros((256, 3), np.uint8)
        flat[: len(pal)] = pal[:256]
        img.putpalette(flat.ravel().tolist())
        img.save(png_path, format="PNG")
    if pgm_path is not None:
        Image.fromarray(pred).save(pgm_path, format="PPM")


def class_histogram(pred: np.ndarray, num_classes: int) -> np.ndarray:
    return np.bincount(np.asarray(pred).ravel(), minlength=num_classes)
