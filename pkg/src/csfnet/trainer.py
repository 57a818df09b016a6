"""Cross-entropy loss, poly learning rate, momentum SGD and the training loop."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .data import IGNORE, AugmentPolicy, Sample, augment, collate
from .engine import DTYPE, Function, Tensor, backward
from .nn import ParameterStore


class CrossEntropy(Function):
    """Mean softmax cross-entropy over non-ignored pixels of (N, K, H, W) logits."""

    name = "cross_entropy"

    def forward(self, logits, labels=None, ignore=IGNORE):
        n, k, h, w = logits.shape
        z = logits.astype(np.float64).transpose(0, 2, 3, 1).reshape(-1, k)
        y = np.asarray(labels).reshape(-1)
        valid = y != ignore
        if np.any(y[valid] >= k) or np.any(y[valid] < 0):
            bad = y[valid][(y[valid] >= k) | (y[valid] < 0)][0]
            raise ValueError(f"label value {bad} is outside 0..{k - 1} and not the ignore value {ignore}")
        self.shape, self.count = logits.shape, int(valid.sum())
        z = z - z.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        yv = np.where(valid, y, 0)
        rows = np.arange(y.size)
        # log softmax at the label, computed from the shifted logits
        logp = z[rows, yv] - np.log(np.exp(z).sum(axis=1))
        loss = -(logp * valid).sum() / max(self.count, 1)
        p[rows, yv] -= 1.0
        p *= valid[:, None] / max(self.count, 1)
        self.dz = p
        return np.asarray([loss], dtype=DTYPE)

    def backward(self, grad):
        n, k, h, w = self.shape
        g = (self.dz * float(grad[0])).reshape(n, h, w, k).transpose(0, 3, 1, 2)
        return (np.ascontiguousarray(g, dtype=DTYPE),)

    def infer(self, logits, labels=None, ignore=IGNORE):
        return (1,), 4 * int(np.prod(logits))


def cross_entropy_loss(logits: Tensor, labels: np.ndarray, ignore: int = IGNORE) -> Tensor:
    n, k, h, w = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (n, h, w):
        raise ValueError(f"labels {labels.shape} do not match logits {logits.shape}")
    return CrossEntropy.apply(logits, labels=labels, ignore=ignore)


@dataclass(frozen=True)
class TrainConfig:
    base_lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    power: float = 0.9
    max_iters: int = 200
    batch_size: int = 4
    seed: int = 0
    policy: AugmentPolicy = field(default_factory=AugmentPolicy)

    def __post_init__(self):
        if not self.base_lr > 0:
            raise ValueError(f"TrainConfig.base_lr must be positive, got {self.base_lr}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"TrainConfig.momentum must be in [0, 1), got {self.momentum}")
        if self.max_iters < 1:
            raise ValueError(f"TrainConfig.max_iters must be at least 1, got {self.max_iters}")
        if self.batch_size < 1:
            raise ValueError(f"TrainConfig.batch_size must be at least 1, got {self.batch_size}")
        if self.weight_decay < 0 or self.power <= 0:
            raise ValueError("TrainConfig.weight_decay must be >= 0 and power > 0")


def poly_lr(it: int, cfg: TrainConfig) -> float:
    if not 0 <= it <= cfg.max_iters:
        raise ValueError(f"iteration {it} outside 0..{cfg.max_iters}")
    return cfg.base_lr * (1.0 - it / cfg.max_iters) ** cfg.power


class Sgd:
    """Momentum SGD: v = m*v + g + wd*p, p -= lr*v.

    Weight decay is skipped for BN parameters and biases; frozen store
    entries are left untouched.
    """

    def __init__(self, store: ParameterStore, cfg: TrainConfig):
        self.store, self.cfg = store, cfg
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, lr: float) -> None:
        live = list(self.store.trainable())
        missing = [name for name, e in live if e.tensor.grad is None]
        if missing:
            raise ValueError(f"no gradient for {missing[0]} (and {len(missing) - 1} more); run backward first")
        m, wd, lr32 = DTYPE(self.cfg.momentum), DTYPE(self.cfg.weight_decay), DTYPE(lr)
        for name, e in live:
            p = e.tensor
            g = p.grad
            if wd and not e.no_decay:
                g = g + wd * p.data
            v = self.velocity.get(name)
            v = g.copy() if v is None else m * v + g
            self.velocity[name] = v
            p.data -= lr32 * v


def sgd_step(store: ParameterStore, cfg: TrainConfig, lr: float, opt: Optional[Sgd] = None) -> Sgd:
    """One update; pass the returned optimizer back in to keep momentum."""
    opt = opt or Sgd(store, cfg)
    opt.step(lr)
    return opt


class HistoryRow(NamedTuple):
    iter: int
    loss: float
    lr: float


class TrainingDiverged(RuntimeError):
    pass


def batches(n: int, batch_size: int, rng: np.random.Generator):
    """Endless index batches from per-epoch shuffles."""
    order: list[int] = []
    while True:
        if len(order) < batch_size:
            order += rng.permutation(n).tolist()
        yield order[:batch_size]
        order = order[batch_size:]


def train_loop(
    net,
    store: ParameterStore,
    dataset: Sequence[Sample],
    cfg: TrainConfig,
    on_iter: Optional[Callable[[HistoryRow], None]] = None,
) -> list[HistoryRow]:
    """Run ``cfg.max_iters`` SGD iterations; deterministic for a fixed seed."""
    if not dataset:
        raise ValueError("training dataset is empty")
    rng = np.random.default_rng(cfg.seed)
    opt = Sgd(store, cfg)
    pick = batches(len(dataset), cfg.batch_size, rng)
    history: list[HistoryRow] = []
    net.train()
    for it in range(cfg.max_iters):
        batch = collate([augment(dataset[i], rng, cfg.policy) for i in next(pick)])
        loss = cross_entropy_loss(net(batch.rgb, batch.x), batch.labels)
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingDiverged(f"loss became {value} at iteration {it}")
        store.zero_grad()
        backward(loss)
        lr = poly_lr(it, cfg)
        opt.step(lr)
        row = HistoryRow(it, value, lr)
        history.append(row)
        if on_iter is not None:
            on_iter(row)
    return history


def moving_average(values: Sequence[float], window: int) -> np.ndarray:
    """Means of consecutive non-overlapping windows."""
    v = np.asarray(values, dtype=np.float64)
    n = len(v) // window
    return v[: n * window].reshape(n, window).mean(axis=1)
