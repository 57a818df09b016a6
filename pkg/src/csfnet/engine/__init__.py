"""Float32 tensor engine with reverse-mode differentiation."""

from .ops import (
    add,
    affine,
    concat_channels,
    mean_all,
    mul,
    relu,
    reshape,
    sigmoid,
    split_channels,
    sum_all,
)
from .spatial import (
    adaptive_avg_pool2d,
    adaptive_windows,
    avg_pool2d,
    batchnorm2d,
    bilinear_resize,
    conv2d,
)
from .tensor import DTYPE, FlopCounter, Function, Tensor, backward, count_flops, no_grad

__all__ = [
    "DTYPE",
    "FlopCounter",
    "Function",
    "Tensor",
    "adaptive_avg_pool2d",
    "adaptive_windows",
    "add",
    "affine",
    "avg_pool2d",
    "backward",
    "batchnorm2d",
    "bilinear_resize",
    "concat_channels",
    "conv2d",
    "count_flops",
    "mean_all",
    "mul",
    "no_grad",
    "relu",
    "reshape",
    "sigmoid",
    "split_channels",
    "sum_all",
]
