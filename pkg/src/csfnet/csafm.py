"""Cosine similarity attention fusion of two same-shape feature maps.

Both maps are average-pooled to a small grid, each channel is flattened and
the per-channel cosine similarity between the modalities is turned into a
channel weight W in (0, 1) by a 1x1-conv bottleneck and a sigmoid. W then
rectifies each branch with the other (``rectify``) and mixes them into one
map (``fuse``).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Optional, Union

import numpy as np

from .engine import DTYPE, Function, Tensor, adaptive_avg_pool2d, add, mul, relu, reshape, sigmoid
from .nn import BatchNorm2d, Conv2d, Module

EPS_NORM = 1e-8

Outputs = Literal["rectified_and_fused", "fused_only"]


@dataclass(frozen=True)
class CsafmConfig:
    channels: int
    pool_w: int
    pool_h: int
    hidden_channels: Optional[int] = None

    def __post_init__(self):
        if self.hidden_channels is None:
            object.__setattr__(self, "hidden_channels", max(self.channels // 4, 8))
        for field in ("channels", "pool_w", "pool_h", "hidden_channels"):
            if getattr(self, field) < 1:
                raise ValueError(f"CsafmConfig.{field} must be positive, got {getattr(self, field)}")

    @property
    def n(self) -> int:
        return self.pool_w * self.pool_h


class ChannelCosine(Function):
    """Per-sample, per-channel cosine between two (N, C, h, w) maps -> (N, C)."""

    name = "channel_cosine"

    def forward(self, a, b):
        n, c = a.shape[:2]
        x = a.reshape(n, c, -1).astype(np.float64)
        y = b.reshape(n, c, -1).astype(np.float64)
        nx = np.sqrt((x * x).sum(-1))
        ny = np.sqrt((y * y).sum(-1))
        dot = (x * y).sum(-1)
        live = (nx >= EPS_NORM) & (ny >= EPS_NORM)
        denom = np.where(live, nx * ny, 1.0)
        raw = np.where(live, dot / denom, 0.0)
        self.x, self.y, self.nx, self.ny = x, y, nx, ny
        self.cos, self.shape = raw, a.shape
        # gradient flows only where the value is defined and not clamped
        self.active = live & (np.abs(raw) <= 1.0)
        return np.clip(raw, -1.0, 1.0).astype(DTYPE)

    def backward(self, grad):
        g = np.where(self.active, grad.astype(np.float64), 0.0)[..., None]
        nx = np.where(self.active, self.nx, 1.0)[..., None]
        ny = np.where(self.active, self.ny, 1.0)[..., None]
        cos = self.cos[..., None]
        gx = g * (self.y / (nx * ny) - cos * self.x / (nx * nx))
        gy = g * (self.x / (nx * ny) - cos * self.y / (ny * ny))
        return gx.reshape(self.shape), gy.reshape(self.shape)

    def infer(self, a, b):
        if tuple(a) != tuple(b):
            raise ValueError(f"cosine inputs differ in shape: {a} vs {b}")
        n, c, h, w = a
        return (n, c), 6 * n * c * h * w


def _check_pair(fx: Tensor, fy: Tensor, cfg: CsafmConfig) -> None:
    if fx.shape != fy.shape:
        raise ValueError(f"CS-AFM inputs differ in shape: {fx.shape} vs {fy.shape}")
    if fx.ndim != 4 or fx.shape[1] != cfg.channels:
        raise ValueError(f"CS-AFM expects (N, {cfg.channels}, H, W) inputs, got {fx.shape}")


def pooled_size(cfg: CsafmConfig, h: int, w: int) -> tuple[int, int]:
    """Pooling grid (rows, cols), clamped to the feature extent."""
    return min(cfg.pool_h, h), min(cfg.pool_w, w)


def channel_cosine_similarity(fx: Tensor, fy: Tensor, cfg: CsafmConfig) -> Tensor:
    """S_v of shape (N, C): cosine of the pooled, flattened channel maps."""
    _check_pair(fx, fy, cfg)
    ph, pw = pooled_size(cfg, fx.shape[2], fx.shape[3])
    return ChannelCosine.apply(adaptive_avg_pool2d(fx, ph, pw), adaptive_avg_pool2d(fy, ph, pw))


class CsafmState(Module):
    """Bottleneck mapping similarities to channel weights."""

    def __init__(self, cfg: CsafmConfig):
        super().__init__()
        self.conv1 = Conv2d(cfg.channels, cfg.hidden_channels, 1, bias=True)
        self.bn = BatchNorm2d(cfg.hidden_channels)
        self.conv2 = Conv2d(cfg.hidden_channels, cfg.channels, 1, bias=True)


def similarity_to_weights(sv: Tensor, state: CsafmState) -> Tensor:
    """W = sigmoid(conv2(relu(bn(conv1(S_v))))) with S_v viewed as (N, C, 1, 1).

    Accepts S_v of shape (C,) or (N, C) and returns W of the same shape. The
    BN follows ``state.training``.
    """
    c = state.conv1.weight.shape[1]
    if sv.shape[-1] != c or sv.ndim > 2:
        raise ValueError(f"similarity vector must have {c} channels, got shape {sv.shape}")
    n = sv.shape[0] if sv.ndim == 2 else 1
    h = reshape(sv, (n, c, 1, 1))
    h = relu(state.bn(state.conv1(h)))
    w = sigmoid(state.conv2(h))
    return reshape(w, sv.shape)


def _channel_weight(w: Tensor, like: Tensor) -> Tensor:
    # (N, C) weights become (N, C, 1, 1) for per-sample broadcast
    if w.ndim == 2:
        if w.shape != like.shape[:2]:
            raise ValueError(f"weights {w.shape} do not match features {like.shape}")
        return reshape(w, (w.shape[0], w.shape[1], 1, 1))
    return w


def rectify(fx: Tensor, fy: Tensor, w: Tensor) -> tuple[Tensor, Tensor]:
    """F'x = Fx + Fy*W and F'y = Fy + Fx*(1-W)."""
    w = _channel_weight(w, fx)
    return add(fx, mul(fy, w)), add(fy, mul(fx, 1.0 - w))


def fuse(fx: Tensor, fy: Tensor, w: Tensor) -> Tensor:
    """F_m = Fy*W + Fx*(1-W)."""
    w = _channel_weight(w, fx)
    return add(mul(fy, w), mul(fx, 1.0 - w))


def csafm_forward(
    fx: Tensor, fy: Tensor, cfg: CsafmConfig, state: CsafmState, outputs: Outputs = "rectified_and_fused"
) -> Union[Tensor, tuple[Tensor, Tensor, Tensor]]:
    w = similarity_to_weights(channel_cosine_similarity(fx, fy, cfg), state)
    fm = fuse(fx, fy, w)
    if outputs == "fused_only":
        return fm
    if outputs != "rectified_and_fused":
        raise ValueError(f"unknown CS-AFM outputs mode {outputs!r}")
    rx, ry = rectify(fx, fy, w)
    return rx, ry, fm


class Csafm(CsafmState):
    """CS-AFM as a network module: config plus its learned state."""

    def __init__(self, cfg: CsafmConfig, outputs: Outputs = "rectified_and_fused"):
        super().__init__(cfg)
        self.cfg, self.outputs = cfg, outputs

    def forward(self, fx: Tensor, fy: Tensor):
        return csafm_forward(fx, fy, self.cfg, self, self.outputs)
