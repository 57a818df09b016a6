"""Pooled context module placed between the encoder and the decoder.

The deepest feature map is pooled to a small fixed grid, reduced to a quarter
of its channels, passed through parallel 1x4 and 4x1 convolutions, resized
back and summed, then projected to c_in/32 channels by a plain 3x3 conv.
"""

from __future__ import annotations

from dataclasses import dataclass

from .engine import Tensor, adaptive_avg_pool2d, add, bilinear_resize
from .nn import Conv2d, ConvBNReLU, Module

# even kernels are padded one cell before and two after along the long axis
ROW_PAD = (0, 0, 1, 2)
COL_PAD = (1, 2, 0, 0)


@dataclass(frozen=True)
class ContextConfig:
    c_in: int
    s_w: int
    s_h: int

    def __post_init__(self):
        if self.c_in < 32 or self.c_in % 32:
            raise ValueError(f"ContextConfig.c_in must be a positive multiple of 32, got {self.c_in}")
        if self.s_w < 1 or self.s_h < 1:
            raise ValueError(f"ContextConfig pooled size must be positive, got {(self.s_w, self.s_h)}")

    @property
    def c_out(self) -> int:
        return self.c_in // 32


class ContextModule(Module):
    def __init__(self, cfg: ContextConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.c_in
        self.reduce = ConvBNReLU(c, c // 4, 1)
        self.row = ConvBNReLU(c // 4, c // 16, (1, 4), padding=ROW_PAD)
        self.col = ConvBNReLU(c // 4, c // 16, (4, 1), padding=COL_PAD)
        self.out = Conv2d(c // 16, c // 32, 3, padding=1, bias=True)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.cfg.c_in:
            raise ValueError(f"context module expects {self.cfg.c_in} input channels, got shape {x.shape}")
        h, w = x.shape[2], x.shape[3]
        p = adaptive_avg_pool2d(x, min(self.cfg.s_h, h), min(self.cfg.s_w, w))
        p = self.reduce(p)
        row = bilinear_resize(self.row(p), h, w)
        col = bilinear_resize(self.col(p), h, w)
        return self.out(add(row, col))


def context_forward(x: Tensor, cfg: ContextConfig, state: ContextModule) -> Tensor:
    if state.cfg != cfg:
        raise ValueError(f"context state was built for {state.cfg}, not {cfg}")
    return state(x)
