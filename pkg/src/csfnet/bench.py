"""Steady-state latency measurement: untimed warmup, then per-forward timing."""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .engine import Tensor, no_grad


@dataclass
class BenchReport:
    warmup_iters: int
    timed_iters: int
    latencies_ms: list[float] = field(repr=False)
    params: int = 0
    flops: int = 0
    shape: tuple[int, ...] = ()

    @property
    def mean_ms(self) -> float:
        return statistics.fmean(self.latencies_ms)

    @property
    def std_ms(self) -> float:
        return statistics.stdev(self.latencies_ms)

    @property
    def median_ms(self) -> float:
        return statistics.median(self.latencies_ms)

    @property
    def fps(self) -> float:
        return 1000.0 / self.mean_ms

    def format(self) -> str:
        rows = [
            ("input", "x".join(map(str, self.shape))),
            ("warmup", str(self.warmup_iters)),
            ("iters", str(self.timed_iters)),
            ("mean ms", f"{self.mean_ms:.2f}"),
            ("std ms", f"{self.std_ms:.2f}"),
            ("median ms", f"{self.median_ms:.2f}"),
            ("fps", f"{self.fps:.3f}"),
            ("params", f"{self.params:,}"),
            ("GFLOPs", f"{self.flops / 1e9:.2f}"),
        ]
        return "\n".join(f"{k:<10} {v:>16}" for k, v in rows)

    def csv(self) -> str:
        head = "warmup,iters,mean_ms,std_ms,median_ms,fps,params,flops"
        vals = (f"{self.warmup_iters},{self.timed_iters},{self.mean_ms:.4f},{self.std_ms:.4f},"
                f"{self.median_ms:.4f},{self.fps:.4f},{self.params},{self.flops}")
        return head + "\n" + vals + "\n"


def time_calls(fn: Callable[[], object], warmup: int, iters: int,
               clock: Callable[[], float] = time.perf_counter) -> list[float]:
    """Milliseconds of each of ``iters`` calls after ``warmup`` untimed calls."""
    if iters < 2:
        raise ValueError(f"iters must be at least 2 to estimate a spread, got {iters}")
    if warmup < 0:
        raise ValueError(f"warmup must be non-negative, got {warmup}")
    for _ in range(warmup):
        fn()
    out = []
    for _ in range(iters):
        t0 = clock()
        fn()
        out.append((clock() - t0) * 1000.0)
    return out


def benchmark_fps(net, rgb_shape: tuple[int, int, int, int], x_channels: int,
                  warmup: int = 50, iters: int = 200, params: int = 0, flops: int = 0,
                  seed: int = 0, forward: Optional[Callable] = None) -> BenchReport:
    """Time eval-mode forwards of ``net`` on fixed pseudo-random inputs."""
    n, _, h, w = rgb_shape
    if n != 1:
        raise ValueError(f"benchmarks run at batch size 1, got {n}")
    rng = np.random.default_rng(seed)
    rgb = Tensor(rng.standard_normal(rgb_shape, dtype=np.float32))
    x = Tensor(rng.standard_normal((1, x_channels, h, w), dtype=np.float32))
    net.eval()
    call = forward or net

    def run():
        with no_grad():
            call(rgb, x)

    lat = time_calls(run, warmup, iters)
    return BenchReport(warmup, iters, lat, params, flops, tuple(rgb_shape))
