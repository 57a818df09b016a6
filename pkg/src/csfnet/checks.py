"""Finite-difference checks of whole modules on small seeded instances."""

from __future__ import annotations

import numpy as np

from .context import ContextConfig, ContextModule
from .csafm import Csafm, CsafmConfig
from .engine import Tensor, concat_channels
from .engine.gradcheck import GradCheckResult, check_gradients
from .network import ModelConfig, build
from .nn import BatchNorm2d, Module, initialize
from .trainer import cross_entropy_loss

MODULES = ("csafm", "context", "network")


def randomize_bn(module: Module, rng: np.random.Generator) -> None:
    """Give every BN non-trivial affine parameters and running statistics."""
    for _, m in module.named_modules():
        if isinstance(m, BatchNorm2d):
            c = m.weight.shape[0]
            m.weight.data[...] = rng.uniform(0.5, 1.5, c)
            m.bias.data[...] = rng.uniform(-0.5, 0.5, c)
            m.running_mean[...] = rng.uniform(-0.2, 0.2, c)
            m.running_var[...] = rng.uniform(0.5, 2.0, c)


def _randomize_biases(module: Module, rng: np.random.Generator) -> None:
    for _, p in module.named_parameters():
        if p.kind == "bias":
            p.data[...] = rng.uniform(-0.3, 0.3, p.shape)


def _params(module: Module) -> list[Tensor]:
    return [p for _, p in sorted(module.named_parameters(), key=lambda kv: kv[0])]


def check_csafm(seed: int = 0) -> GradCheckResult:
    """Whole CS-AFM on 1x2x4x4 maps, all three outputs, w.r.t. both inputs and every parameter."""
    rng = np.random.default_rng(seed)
    mod = Csafm(CsafmConfig(2, 2, 2, 8))
    initialize(mod, seed)
    randomize_bn(mod, rng)
    _randomize_biases(mod, rng)
    mod.eval()
    fx = Tensor(rng.standard_normal((1, 2, 4, 4)), requires_grad=True)
    fy = Tensor(rng.standard_normal((1, 2, 4, 4)), requires_grad=True)

    def run():
        rx, ry, fm = mod(fx, fy)
        return concat_channels([rx, ry, fm])

    return check_gradients(run, [fx, fy] + _params(mod), seed=seed)


def check_context(seed: int = 0) -> GradCheckResult:
    """Context module with c_in=32 on a 4x4 map."""
    rng = np.random.default_rng(seed)
    mod = ContextModule(ContextConfig(32, 3, 3))
    initialize(mod, seed)
    randomize_bn(mod, rng)
    _randomize_biases(mod, rng)
    mod.eval()
    x = Tensor(rng.standard_normal((1, 32, 4, 4)), requires_grad=True)
    return check_gradients(lambda: mod(x), [x] + _params(mod), max_entries=400, seed=seed)


def check_network(seed: int = 0, entries: int = 100) -> GradCheckResult:
    """Cross-entropy of a 64x64 toy network w.r.t. a random parameter sample.

    Batch statistics (train-mode BN) keep activations well scaled at init.
    """
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(num_classes=3, width=64, height=64)
    net, store = build(cfg, seed)
    net.train()
    rgb = Tensor(rng.standard_normal((2, 3, 64, 64)))
    x = Tensor(rng.standard_normal((2, 2, 64, 64)))
    labels = rng.integers(0, 3, (2, 64, 64))
    labels[:, :4, :4] = 255
    params = [e.tensor for _, e in store.trainable()]

    def ref(arr: np.ndarray) -> float:
        z = arr - arr.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        keep = labels != 255
        picked = np.take_along_axis(logp, np.where(keep, labels, 0)[:, None], axis=1)[:, 0]
        return float(-(picked * keep).sum() / keep.sum())

    loss = (lambda out: cross_entropy_loss(out, labels), ref)
    return check_gradients(lambda: net(rgb, x), params, loss=loss, max_entries=entries, seed=seed)


def run_check(name: str, seed: int = 0) -> GradCheckResult:
    if name not in MODULES:
        raise ValueError(f"unknown module {name!r}; choose from {', '.join(MODULES)}")
    return {"csafm": check_csafm, "context": check_context, "network": check_network}[name](seed)


__all__ = ["MODULES", "check_context", "check_csafm", "check_network", "randomize_bn", "run_check"]
