"""On-disk datasets laid out as ``rgb/``, ``x/`` and ``labels/`` with matching file stems."""

from __future__ import annotations

from pathlib import Path

from .io import DataError, PathLike, load_gray, load_image, load_label
from .modality import make_x_input, normalize_depth
from .sample import Sample

SUBDIRS = ("rgb", "x", "labels")


def stems(directory: PathLike) -> list[str]:
    root = Path(directory)
    if not root.is_dir():
        raise DataError(f"{root}: not a directory")
    return sorted(p.stem for p in root.iterdir() if p.is_file())


def find(directory: PathLike, stem: str) -> Path:
    hits = sorted(Path(directory).glob(stem + ".*"))
    if not hits:
        raise DataError(f"{directory}: no file for sample {stem!r}")
    return hits[0]


def load_folder(root: PathLike, modality: str) -> list[Sample]:
    """Read every sample under ``root``; all three subdirectories must agree."""
    root = Path(root)
    for sub in SUBDIRS:
        if not (root / sub).is_dir():
            raise DataError(f"{root}: missing {sub}/ subdirectory")
    names = stems(root / "rgb")
    if not names:
        raise DataError(f"{root / 'rgb'}: no images")
    out = []
    for stem in names:
        rgb = load_image(find(root / "rgb", stem))
        raw = load_gray(find(root / "x", stem))
        if modality == "depth":
            raw = normalize_depth(raw)
        label = load_label(find(root / "labels", stem))
        if raw.shape != rgb.shape[1:] or label.shape != rgb.shape[1:]:
            raise DataError(f"{root}: sample {stem!r} parts differ in size")
        out.append(Sample(rgb, make_x_input(modality, raw, rgb), label))
    return out
