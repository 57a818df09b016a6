"""Parameter census and analytic FLOPs from a shape-only forward pass."""

from __future__ import annotations

from collections import defaultdict
from typing import Optional, Union

from .engine import FlopCounter, Tensor, count_flops
from .network import CSFNet, ModelConfig
from .nn import Module, ParameterStore


def count_parameters(obj: Union[ParameterStore, Module]) -> int:
    if isinstance(obj, ParameterStore):
        return obj.count()
    return sum(p.size for _, p in obj.named_parameters())


def flop_counter(cfg: ModelConfig, height: Optional[int] = None, width: Optional[int] = None,
                 batch: int = 1) -> FlopCounter:
    """Run the network on meta tensors and return the populated counter."""
    h, w = height or cfg.height, width or cfg.width
    net = CSFNet(cfg).eval()
    with count_flops() as counter:
        net(Tensor.meta((batch, cfg.rgb_channels, h, w)), Tensor.meta((batch, cfg.x_channels, h, w)))
    return counter


def estimate_flops(cfg: ModelConfig, height: Optional[int] = None, width: Optional[int] = None) -> int:
    """Analytic FLOPs of one forward pass (1 MAC = 2 FLOPs) at batch size 1."""
    return flop_counter(cfg, height, width).total


def _top(name: str) -> str:
    return name.split(".", 1)[0]


def describe(cfg: ModelConfig, height: Optional[int] = None, width: Optional[int] = None,
             macs: bool = False) -> str:
    """Per-module parameter and FLOPs table, totals and the pooling sizes in use."""
    h, w = height or cfg.height, width or cfg.width
    net = CSFNet(cfg)
    params: dict[str, int] = defaultdict(int)
    for name, p in net.named_parameters():
        params[_top(name)] += p.size
    counter = flop_counter(cfg, h, w)
    flops: dict[str, int] = defaultdict(int)
    for scope, v in counter.by_scope.items():
        flops[_top(scope) if scope else "(top)"] += v
    div, unit = (2, "GMACs") if macs else (1, "GFLOPs")
    rows = [f"{'module':<10} {'params':>12} {unit:>10}"]
    for name in list(params) + [k for k in flops if k not in params]:
        rows.append(f"{name:<10} {params.get(name, 0):>12,} {flops.get(name, 0) / div / 1e9:>10.3f}")
    total_p = sum(params.values())
    rows.append(f"{'total':<10} {total_p:>12,} {counter.total / div / 1e9:>10.3f}")
    rows.append("")
    rows.append(f"model        {cfg.variant}, {cfg.num_classes} classes, x channels {cfg.x_channels}, "
                f"dual stages {cfg.dual_branch_stages}, decoder fusion {cfg.decoder_fusion}")
    rows.append(f"resolution   {w}x{h}")
    rows.append(f"parameters   {total_p / 1e6:.2f}M")
    rows.append(f"{'MACs' if macs else 'FLOPs':<12} {counter.total / div / 1e9:.2f}G")
    t = cfg.pooling_table
    rows.append(f"pooling      ({cfg.pooling}) " + ", ".join(
        f"{k.upper()} {v[0]}x{v[1]}" for k, v in
        (("l1", t.l1), ("l2", t.l2), ("l3", t.l3), ("l4", t.l4), ("ctx", t.ctx))
    ))
    return "\n".join(rows)
