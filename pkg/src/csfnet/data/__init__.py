"""Input construction, augmentation, file I/O and synthetic scenes."""

from .augment import AugmentPolicy, augment, color_jitter, crop, hflip, nearest_indices, rescale
from .folder import load_folder
from .io import (
    DataError,
    class_histogram,
    default_palette,
    load_gray,
    load_image,
    load_label,
    load_palette,
    save_gray_png,
    save_label,
    save_prediction,
)
from .modality import LUMA, compute_aolp, luminance, make_x_input, normalize, normalize_depth
from .sample import IGNORE, Sample, SampleBatch, collate
from .synthetic import Shape, rasterize, synth_dataset

__all__ = [
    "AugmentPolicy", "DataError", "IGNORE", "LUMA", "Sample", "SampleBatch", "Shape",
    "augment", "class_histogram", "collate", "color_jitter", "compute_aolp", "crop",
    "default_palette", "hflip", "load_folder", "load_gray", "load_image", "load_label",
    "load_palette", "luminance", "make_x_input", "nearest_indices", "normalize",
    "normalize_depth", "rasterize", "rescale", "save_gray_png", "save_label",
    "save_prediction", "synth_dataset",
]
