"""CSFNet assembly: dual-branch encoder, context module, decoder and head.

Encoder levels 1..``dual_branch_stages`` run an RGB and an X backbone side by
side with a CS-AFM after every level; the rectified maps feed each branch's
next stage and the fused map is the level's skip source. After the last dual
level the fused map feeds a single trunk. The decoder upsamples by 2, 2, 4
and 2, fusing projected skips from levels 4, 3 and 1 on the way.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Optional

from .backbone import Backbone, BackboneConfig
from .context import ContextConfig, ContextModule
from .csafm import Csafm, CsafmConfig
from .engine import Tensor, add, bilinear_resize, no_grad
from .nn import Conv2d, ConvBNReLU, Module, ParameterStore, Sequential, initialize

VARIANTS = {"CSFNet-1": "STDC1", "CSFNet-2": "STDC2"}
DECODER_WIDTH = 32
# decoder steps: (upsampling scale, conv layers, skip level fused afterwards)
DECODER = ((2, 1, 4), (2, 1, 3), (4, 2, 1), (2, 1, None))


@dataclass(frozen=True)
class PoolingTable:
    """Adaptive pooling sizes as (width, height) per CS-AFM level and for the context module."""

    l1: tuple[int, int]
    l2: tuple[int, int]
    l3: tuple[int, int]
    l4: tuple[int, int]
    ctx: tuple[int, int]

    def level(self, i: int) -> tuple[int, int]:
        if 1 <= i <= 4:
            return getattr(self, f"l{i}")
        if i == 5:
            # no published level-5 size: halve level 4, rounding up
            w, h = self.l4
            return math.ceil(w / 2), math.ceil(h / 2)
        raise ValueError(f"no pooling level {i}")


POOLING = {
    "cityscapes": PoolingTable((32, 16), (16, 8), (8, 4), (4, 2), (8, 4)),
    "mfnet": PoolingTable((24, 16), (12, 8), (6, 4), (3, 2), (5, 5)),
    "zju": PoolingTable((24, 16), (12, 8), (6, 4), (3, 2), (5, 5)),
}


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "CSFNet-1"
    num_classes: int = 19
    rgb_channels: int = 3
    x_channels: int = 2
    dual_branch_stages: int = 3
    decoder_fusion: str = "csafm"
    pooling: str = "cityscapes"
    width: int = 1024
    height: int = 512
    # CS-AFM bottleneck width as a fraction of the channel count
    csafm_hidden_ratio: float = 0.5
    # build and run the X branch through stage 5 even when it fuses earlier
    full_x_backbone: bool = True
    pooling_override: Optional[PoolingTable] = field(default=None, compare=True)

    def __post_init__(self):
        def bad(name, msg):
            raise ValueError(f"ModelConfig.{name}: {msg}")

        if self.variant not in VARIANTS:
            bad("variant", f"must be one of {sorted(VARIANTS)}, got {self.variant!r}")
        if self.num_classes < 1 or self.num_classes > 255:
            bad("num_classes", f"must be in 1..255, got {self.num_classes}")
        if self.rgb_channels != 3:
            bad("rgb_channels", f"must be 3, got {self.rgb_channels}")
        if self.x_channels not in (1, 2):
            bad("x_channels", f"must be 1 or 2, got {self.x_channels}")
        if self.dual_branch_stages not in (3, 4, 5):
            bad("dual_branch_stages", f"must be 3, 4 or 5, got {self.dual_branch_stages}")
        if self.decoder_fusion not in ("csafm", "add"):
            bad("decoder_fusion", f"must be 'csafm' or 'add', got {self.decoder_fusion!r}")
        if self.pooling_override is None and self.pooling not in POOLING:
            bad("pooling", f"must be one of {sorted(POOLING)}, got {self.pooling!r}")
        for name in ("width", "height"):
            v = getattr(self, name)
            if v < 32 or v % 32:
                bad(name, f"must be a positive multiple of 32, got {v}")
        if not 0 < self.csafm_hidden_ratio <= 1:
            bad("csafm_hidden_ratio", f"must be in (0, 1], got {self.csafm_hidden_ratio}")

    @property
    def pooling_table(self) -> PoolingTable:
        return self.pooling_override or POOLING[self.pooling]

    @property
    def backbone_variant(self) -> str:
        return VARIANTS[self.variant]

    def hidden(self, channels: int) -> int:
        return max(1, int(channels * self.csafm_hidden_ratio))

    def with_(self, **kw) -> "ModelConfig":
        return replace(self, **kw)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls) if f.name != "pooling_override"]


class Upsample(Module):
    """Bilinear upsampling followed by 3x3 conv-BN-ReLU layers."""

    def __init__(self, scale: int, convs: int, width: int = DECODER_WIDTH):
        super().__init__()
        self.scale = scale
        self.convs = Sequential([ConvBNReLU(width, width, 3) for _ in range(convs)])

    def forward(self, x: Tensor) -> Tensor:
        h, w = x.shape[2] * self.scale, x.shape[3] * self.scale
        return self.convs(bilinear_resize(x, h, w))


class CSFNet(Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.dual_branch_stages
        bb = cfg.backbone_variant
        self.rgb = Backbone(BackboneConfig(bb, cfg.rgb_channels))
        self.x = Backbone(BackboneConfig(bb, cfg.x_channels), 5 if cfg.full_x_backbone else d)
        ch = self.rgb.cfg.stage_channels
        table = cfg.pooling_table
        for level in range(1, d + 1):
            pw, ph = table.level(level)
            c = ch[level - 1]
            setattr(self, f"fuse{level}", Csafm(CsafmConfig(c, pw, ph, cfg.hidden(c))))
        cw, chh = table.ctx
        self.context = ContextModule(ContextConfig(ch[4], cw, chh))
        for i, (scale, convs, skip) in enumerate(DECODER, start=1):
            setattr(self, f"up{i}", Upsample(scale, convs))
            if skip is None:
                continue
            setattr(self, f"skip{skip}", ConvBNReLU(ch[skip - 1], DECODER_WIDTH, 1))
            if cfg.decoder_fusion == "csafm":
                pw, ph = table.level(skip)
                dcfg = CsafmConfig(DECODER_WIDTH, pw, ph, cfg.hidden(DECODER_WIDTH))
                setattr(self, f"dfuse{i}", Csafm(dcfg, outputs="fused_only"))
        # small head init keeps the initial softmax close to uniform
        self.head = Conv2d(DECODER_WIDTH, cfg.num_classes, 1, bias=True, init_std=0.01)

    @property
    def idle_prefixes(self) -> list[str]:
        """Parameters that are computed but never reach the logits."""
        d = self.cfg.dual_branch_stages
        if not self.cfg.full_x_backbone:
            return []
        return [f"x.stage{s}." for s in range(d + 1, 6)]

    def check_inputs(self, rgb: Tensor, x: Tensor) -> None:
        cfg = self.cfg
        if rgb.ndim != 4 or rgb.shape[1] != cfg.rgb_channels:
            raise ValueError(f"rgb must be (N, {cfg.rgb_channels}, H, W), got {rgb.shape}")
        if x.ndim != 4 or x.shape[1] != cfg.x_channels:
            raise ValueError(f"x must be (N, {cfg.x_channels}, H, W), got {x.shape}")
        if rgb.shape[0] != x.shape[0] or rgb.shape[2:] != x.shape[2:]:
            raise ValueError(f"rgb {rgb.shape} and x {x.shape} differ in batch or spatial size")
        h, w = rgb.shape[2:]
        if h % 32 or w % 32:
            raise ValueError(f"input height and width must be divisible by 32, got {h}x{w}")

    def encode(self, rgb: Tensor, x: Tensor) -> tuple[dict[int, Tensor], Tensor]:
        """Return skip sources by level and the stage-5 trunk output."""
        d = self.cfg.dual_branch_stages
        skips: dict[int, Tensor] = {}
        r, xx = rgb, x
        for level in range(1, d + 1):
            r = self.rgb.run_stage(level, r)
            xx = self.x.run_stage(level, xx)
            r, xx, fm = getattr(self, f"fuse{level}")(r, xx)
            skips[level] = fm
        if d < 5 and self.cfg.full_x_backbone:
            # the X branch keeps running to stage 5; its output is unused
            with no_grad():
                self.x(xx.detach(), d + 1, 5)
        trunk = skips[d]
        for level in range(d + 1, 6):
            trunk = self.rgb.run_stage(level, trunk)
            skips[level] = trunk
        return skips, trunk

    def forward(self, rgb: Tensor, x: Tensor) -> Tensor:
        self.check_inputs(rgb, x)
        skips, trunk = self.encode(rgb, x)
        y = self.context(trunk)
        for i, (_, _, skip) in enumerate(DECODER, start=1):
            y = getattr(self, f"up{i}")(y)
            if skip is None:
                continue
            s = getattr(self, f"skip{skip}")(skips[skip])
            if self.cfg.decoder_fusion == "csafm":
                y = getattr(self, f"dfuse{i}")(y, s)
            else:
                y = add(y, s)
        return self.head(y)


def build(cfg: ModelConfig, seed: int = 0) -> tuple[CSFNet, ParameterStore]:
    """Construct and initialize a network; identical seeds give identical weights."""
    net = CSFNet(cfg)
    initialize(net, seed)
    store = ParameterStore(net)
    for prefix in net.idle_prefixes:
        store.freeze(prefix)
    return net, store


def forward(net: CSFNet, rgb: Tensor, x: Tensor, mode: str = "eval") -> Tensor:
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    net.train(mode == "train")
    if mode == "eval":
        with no_grad():
            return net(rgb, x)
    return net(rgb, x)
