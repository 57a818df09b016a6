"""Central finite-difference gradient checks.

The network runs in float32 on both routes. The analytic route backpropagates
``sum(out * probe)`` through the engine. The numeric route perturbs one input
entry by +-step, runs the float32 forward, and contracts the outputs with the
probe in float64, so the scalar reduction itself adds no rounding noise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .ops import mul, sum_all
from .tensor import Tensor, backward

STEP = 1e-3
RTOL = 2e-2
# entries whose |analytic| + |numeric| falls below this are compared absolutely
SMALL = 1e-4


@dataclass
class GradCheckResult:
    max_error: float
    checked: int
    failures: int
    significant: int = 0

    @property
    def passed(self) -> bool:
        return self.failures == 0


def compare(analytic: np.ndarray, numeric: np.ndarray, rtol: float = RTOL) -> GradCheckResult:
    """Relative error |a-n|/(|a|+|n|), or plain |a-n| where |a|+|n| < SMALL."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    diff = np.abs(a - n)
    mag = np.abs(a) + np.abs(n)
    err = np.where(mag < SMALL, diff, diff / np.maximum(mag, SMALL))
    return GradCheckResult(
        float(err.max(initial=0.0)), int(err.size), int((err > rtol).sum()), int((mag >= SMALL).sum())
    )


Loss = tuple[Callable[[Tensor], Tensor], Callable[[np.ndarray], float]]


def _probe_loss(shape, seed) -> Loss:
    probe = np.random.default_rng(seed).standard_normal(shape).astype(np.float32)
    p64 = probe.astype(np.float64)
    return (lambda out: sum_all(mul(out, Tensor(probe)))), (lambda arr: float((arr * p64).sum()))


def check_gradients(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    loss: Optional[Loss] = None,
    step: float = STEP,
    rtol: float = RTOL,
    max_entries: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    seed: int = 0,
) -> GradCheckResult:
    """Compare backward() with central differences for every tensor in ``inputs``.

    ``fn`` rebuilds the graph from the current data of ``inputs``. ``loss`` is
    a pair (engine loss on the output tensor, float64 loss on the output
    array); by default a fixed random probe contraction is used. With
    ``max_entries`` a random subset of at most that many entries is checked,
    drawn across all inputs together.
    """
    out = fn()
    engine_loss, ref_loss = loss or _probe_loss(out.shape, seed)
    for t in inputs:
        t.grad = None
    backward(engine_loss(out))

    entries = [(k, i) for k, t in enumerate(inputs) for i in range(t.size)]
    if max_entries is not None and len(entries) > max_entries:
        rng = rng or np.random.default_rng(seed)
        pick = np.sort(rng.choice(len(entries), max_entries, replace=False))
        entries = [entries[p] for p in pick]

    analytic = np.empty(len(entries))
    numeric = np.empty(len(entries))
    for j, (k, i) in enumerate(entries):
        t = inputs[k]
        g = t.grad if t.grad is not None else np.zeros(t.shape, np.float32)
        analytic[j] = g.reshape(-1)[i]
        flat = t.data.reshape(-1)
        orig = flat[i]
        flat[i] = orig + np.float32(step)
        up = ref_loss(fn().data.astype(np.float64))
        flat[i] = orig - np.float32(step)
        down = ref_loss(fn().data.astype(np.float64))
        flat[i] = orig
        numeric[j] = (up - down) / (2 * step)
    return compare(analytic, numeric, rtol)
