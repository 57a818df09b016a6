"""Module tree, layers and the named parameter store.

Modules register child modules and parameters automatically on attribute
assignment, so the dotted attribute path of a tensor is its parameter name
(``rgb.stage3.0.unit1.conv.weight``). Calling a module pushes its attribute
name onto the active FLOP counter's scope stack, which gives per-module cost
breakdowns for free.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

import numpy as np

from .engine import DTYPE, Tensor, batchnorm2d, conv2d, relu
from .engine.tensor import active_counter


class Parameter(Tensor):
    """Trainable tensor. ``kind`` drives initialization and weight decay."""

    def __init__(self, shape: Sequence[int], kind: str, init_std: Optional[float] = None):
        super().__init__(np.zeros(tuple(shape), dtype=DTYPE), requires_grad=True)
        self.kind = kind
        self.init_std = init_std

    @property
    def decays(self) -> bool:
        return self.kind == "weight"


class Module:
    def __init__(self) -> None:
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "training", True)
        object.__setattr__(self, "_scope", "")

    def __setattr__(self, name: str, value) -> None:
        if isinstance(value, Module):
            value._scope = name
            self._children[name] = value
        elif isinstance(value, Parameter):
            self._params[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def __call__(self, *args, **kwargs):
        counter = active_counter()
        if counter is None or not self._scope:
            return self.forward(*args, **kwargs)
        counter.scope.append(self._scope)
        try:
            return self.forward(*args, **kwargs)
        finally:
            counter.scope.pop()

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(prefix + name + ".")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, b in self._buffers.items():
            yield prefix + name, b
        for name, child in self._children.items():
            yield from child.named_buffers(prefix + name + ".")

    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix.rstrip("."), self
        for name, child in self._children.items():
            yield from child.named_modules(prefix + name + ".")

    def train(self, mode: bool = True) -> "Module":
        for _, m in self.named_modules():
            object.__setattr__(m, "training", mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)


class ModuleList(Module):
    """Indexed children named ``0``, ``1``, ..."""

    def __init__(self, modules: Sequence[Module] = ()):
        super().__init__()
        self._items: list[Module] = []
        for m in modules:
            self.append(m)

    def append(self, m: Module) -> None:
        setattr(self, str(len(self._items)), m)
        self._items.append(m)

    def __iter__(self):
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def __getitem__(self, i: int) -> Module:
        return self._items[i]


class Sequential(ModuleList):
    def forward(self, x: Tensor) -> Tensor:
        for m in self._items:
            x = m(x)
        return x


class Conv2d(Module):
    def __init__(self, cin, cout, kernel, stride=1, padding=0, bias=False, init_std=None):
        super().__init__()
        kh, kw = (kernel, kernel) if isinstance(kernel, int) else kernel
        self.stride, self.padding = stride, padding
        self.weight = Parameter((cout, cin, kh, kw), "weight", init_std)
        self.bias = Parameter((cout,), "bias") if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.weight = Parameter((channels,), "bn_weight")
        self.bias = Parameter((channels,), "bn_bias")
        self.register_buffer("running_mean", np.zeros(channels, dtype=DTYPE))
        self.register_buffer("running_var", np.ones(channels, dtype=DTYPE))

    def forward(self, x: Tensor) -> Tensor:
        return batchnorm2d(
            x, self.weight, self.bias, self.running_mean, self.running_var,
            self.training, self.momentum, self.eps,
        )


class ConvBNReLU(Module):
    """Bias-free convolution, batch norm, ReLU."""

    def __init__(self, cin, cout, kernel=3, stride=1, padding=None):
        super().__init__()
        if padding is None:
            padding = kernel // 2 if isinstance(kernel, int) else 0
        self.conv = Conv2d(cin, cout, kernel, stride, padding)
        self.bn = BatchNorm2d(cout)

    def forward(self, x: Tensor) -> Tensor:
        return relu(self.bn(self.conv(x)))


def initialize(module: Module, seed: int) -> None:
    """Seeded init in sorted-name order: fan-out normal convs, unit BN, zero bias.

    A weight created with an explicit ``init_std`` is drawn with that spread.
    """
    rng = np.random.default_rng(seed)
    for _, p in sorted(module.named_parameters(), key=lambda kv: kv[0]):
        if p.kind == "weight":
            fan_out = p.shape[0] * int(np.prod(p.shape[2:]))
            std = p.init_std if p.init_std is not None else np.sqrt(2.0 / fan_out)
            p.data[...] = rng.normal(0.0, std, p.shape)
        elif p.kind == "bn_weight":
            p.data[...] = 1.0
        else:
            p.data[...] = 0.0
    for _, m in module.named_modules():
        if isinstance(m, BatchNorm2d):
            m.running_mean[...] = 0.0
            m.running_var[...] = 1.0


@dataclass
class Entry:
    tensor: Parameter
    trainable: bool = True

    @property
    def no_decay(self) -> bool:
        return not self.tensor.decays


class ParameterStore:
    """Ordered name -> parameter map plus the non-trainable state buffers.

    Parameters are views of the live module tensors, so updating the store
    updates the network. Buffers (BN running statistics) travel with
    checkpoints but never receive gradients.
    """

    def __init__(self, module: Module):
        self.entries: dict[str, Entry] = {
            name: Entry(p) for name, p in sorted(module.named_parameters(), key=lambda kv: kv[0])
        }
        self.buffers: dict[str, np.ndarray] = dict(
            sorted(module.named_buffers(), key=lambda kv: kv[0])
        )
        if len(self.entries) != sum(1 for _ in module.named_parameters()):
            raise ValueError("duplicate parameter names in module tree")

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, name: str) -> Parameter:
        return self.entries[name].tensor

    def names(self) -> list[str]:
        return list(self.entries)

    def items(self) -> Iterator[tuple[str, Parameter]]:
        for name, e in self.entries.items():
            yield name, e.tensor

    def freeze(self, prefix: str) -> None:
        for name, e in self.entries.items():
            if name.startswith(prefix):
                e.trainable = False

    def trainable(self) -> Iterator[tuple[str, Entry]]:
        return ((n, e) for n, e in self.entries.items() if e.trainable)

    def zero_grad(self) -> None:
        for e in self.entries.values():
            e.tensor.grad = None

    def count(self) -> int:
        return sum(e.tensor.size for e in self.entries.values())

    def state(self) -> dict[str, np.ndarray]:
        """Every tensor a checkpoint must hold, keyed by name."""
        out = {n: e.tensor.data for n, e in self.entries.items()}
        out.update(self.buffers)
        return dict(sorted(out.items()))

    def get(self, name: str) -> Optional[np.ndarray]:
        if name in self.entries:
            return self.entries[name].tensor.data
        return self.buffers.get(name)
