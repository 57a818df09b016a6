"""STDC-style encoder: two stride-2 stems and stacks of dense-concatenate blocks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .engine import Tensor, avg_pool2d, concat_channels
from .nn import ConvBNReLU, Module, ModuleList, Sequential

STAGE_CHANNELS = (32, 64, 256, 512, 1024)
BLOCKS = {"STDC1": (2, 2, 2), "STDC2": (4, 5, 3)}


@dataclass(frozen=True)
class StdcBlockConfig:
    c_in: int
    c_out: int
    stride: int = 1
    num_units: int = 4

    def __post_init__(self):
        if self.stride not in (1, 2):
            raise ValueError(f"StdcBlockConfig.stride must be 1 or 2, got {self.stride}")
        if self.num_units < 2:
            raise ValueError(f"StdcBlockConfig.num_units must be at least 2, got {self.num_units}")
        div = 2 ** (self.num_units - 1)
        if self.c_out % div or self.c_out < div:
            raise ValueError(
                f"StdcBlockConfig.c_out={self.c_out} must be divisible by {div} for {self.num_units} units"
            )

    def widths(self) -> list[int]:
        """Unit output widths: c/2, c/4, ... halving, the last repeating the one before."""
        w = [self.c_out // 2 ** (i + 1) for i in range(self.num_units - 1)]
        return w + [w[-1]]


class StdcBlock(Module):
    def __init__(self, cfg: StdcBlockConfig):
        super().__init__()
        self.cfg = cfg
        widths = cfg.widths()
        self.units = ModuleList([ConvBNReLU(cfg.c_in, widths[0], 1)])
        for i in range(1, cfg.num_units):
            stride = cfg.stride if i == 1 else 1
            self.units.append(ConvBNReLU(widths[i - 1], widths[i], 3, stride))

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.cfg.c_in:
            raise ValueError(f"STDC block expects {self.cfg.c_in} channels, got shape {x.shape}")
        outs = []
        h = x
        for i, unit in enumerate(self.units):
            h = unit(h)
            outs.append(h)
        if self.cfg.stride == 2:
            outs[0] = avg_pool2d(outs[0], 3, 2, 1)
        return concat_channels(outs)


def stdc_block_forward(x: Tensor, cfg: StdcBlockConfig, state: StdcBlock) -> Tensor:
    if state.cfg != cfg:
        raise ValueError(f"block state was built for {state.cfg}, not {cfg}")
    return state(x)


@dataclass(frozen=True)
class BackboneConfig:
    variant: str = "STDC1"
    in_channels: int = 3
    stage_channels: tuple = field(default=STAGE_CHANNELS)

    def __post_init__(self):
        if self.variant not in BLOCKS:
            raise ValueError(f"BackboneConfig.variant must be one of {sorted(BLOCKS)}, got {self.variant!r}")
        if self.in_channels < 1:
            raise ValueError(f"BackboneConfig.in_channels must be positive, got {self.in_channels}")
        if len(self.stage_channels) != 5:
            raise ValueError("BackboneConfig.stage_channels needs five entries")

    @property
    def blocks(self) -> tuple[int, int, int]:
        return BLOCKS[self.variant]


class Backbone(Module):
    """Five stages; stage i halves the resolution i times.

    ``num_stages`` < 5 builds only the leading stages.
    """

    def __init__(self, cfg: BackboneConfig, num_stages: int = 5):
        super().__init__()
        self.cfg, self.num_stages = cfg, num_stages
        ch = cfg.stage_channels
        self.stage1 = ConvBNReLU(cfg.in_channels, ch[0], 3, 2)
        if num_stages >= 2:
            self.stage2 = ConvBNReLU(ch[0], ch[1], 3, 2)
        for s in range(3, num_stages + 1):
            blocks = Sequential()
            for b in range(cfg.blocks[s - 3]):
                cin = ch[s - 2] if b == 0 else ch[s - 1]
                blocks.append(StdcBlock(StdcBlockConfig(cin, ch[s - 1], 2 if b == 0 else 1)))
            setattr(self, f"stage{s}", blocks)

    def stage(self, s: int) -> Module:
        if not 1 <= s <= self.num_stages:
            raise ValueError(f"stage {s} not built (have 1..{self.num_stages})")
        return getattr(self, f"stage{s}")

    def run_stage(self, s: int, x: Tensor) -> Tensor:
        return self.stage(s)(x)

    def forward(self, x: Tensor, start: int = 1, stop: Optional[int] = None) -> list[Tensor]:
        """Run stages ``start``..``stop`` and return each stage's output."""
        stop = self.num_stages if stop is None else stop
        if start == 1:
            if x.ndim != 4 or x.shape[1] != self.cfg.in_channels:
                raise ValueError(
                    f"backbone expects {self.cfg.in_channels} input channels, got shape {x.shape}"
                )
            div = 2**stop
            if x.shape[2] % div or x.shape[3] % div:
                raise ValueError(
                    f"input size {x.shape[2]}x{x.shape[3]} must be divisible by {div} to run {stop} stages"
                )
        feats = []
        for s in range(start, stop + 1):
            x = self.run_stage(s, x)
            feats.append(x)
        return feats


def backbone_forward(x: Tensor, cfg: BackboneConfig, state: Backbone, stop_after_stage: int = 5) -> list[Tensor]:
    if state.cfg != cfg:
        raise ValueError(f"backbone state was built for {state.cfg}, not {cfg}")
    if not 1 <= stop_after_stage <= 5:
        raise ValueError(f"stop_after_stage must be in 1..5, got {stop_after_stage}")
    return state(x, 1, stop_after_stage)

