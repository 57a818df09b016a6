"""Dense float32 tensors with reverse-mode differentiation.

A :class:`Tensor` wraps a contiguous ``float32`` numpy array. Every
differentiable operation is a :class:`Function` subclass; calling
``SomeFunction.apply(...)`` runs the forward kernel and, when gradients are
needed, records the function as the creator of its output so that
:func:`backward` can walk the graph in reverse topological order.

Tensors may also be *meta* tensors that carry a shape and no data. Applying a
function to a meta tensor only infers the output shape and reports the
operation's FLOPs to the active :class:`FlopCounter`; the analytic cost model
therefore walks exactly the same code path as a real forward pass.
"""

from __future__ import annotations

import contextlib
import threading
from collections import defaultdict
from typing import Iterator, Optional, Sequence, Union

import numpy as np

DTYPE = np.float32

_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block (inference, benchmarking)."""
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class FlopCounter:
    """Accumulates analytic FLOPs reported by functions, keyed by scope and op.

    Scopes are pushed by :class:`csfnet.nn.Module` calls so the totals can be
    broken down per sub-module.
    """

    def __init__(self) -> None:
        self.by_scope: dict[str, int] = defaultdict(int)
        self.by_op: dict[str, int] = defaultdict(int)
        self.scope: list[str] = []

    @property
    def total(self) -> int:
        return sum(self.by_op.values())

    def record(self, op: str, flops: int) -> None:
        self.by_op[op] += int(flops)
        self.by_scope[".".join(self.scope)] += int(flops)

    def scope_total(self, prefix: str) -> int:
        return sum(v for k, v in self.by_scope.items() if k == prefix or k.startswith(prefix + "."))


def active_counter() -> Optional[FlopCounter]:
    return getattr(_state, "counter", None)


@contextlib.contextmanager
def count_flops() -> Iterator[FlopCounter]:
    """Collect FLOPs of every function applied inside the block."""
    prev = active_counter()
    counter = FlopCounter()
    _state.counter = counter
    try:
        yield counter
    finally:
        _state.counter = prev


class Tensor:
    """Row-major float32 array of rank 1 to 4 with optional gradient.

    Rank-4 tensors are laid out as (N, C, H, W).
    """

    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.ascontiguousarray(np.asarray(data, dtype=DTYPE))
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if not 1 <= arr.ndim <= 4:
            raise ValueError(f"tensor rank must be 1..4, got shape {arr.shape}")
        self.data: Optional[np.ndarray] = arr
        self._shape = arr.shape
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._ctx: Optional[Function] = None
        self._retain = False
        self._freed = False

    @classmethod
    def meta(cls, shape: Sequence[int]) -> "Tensor":
        """Shape-only tensor used for analytic cost estimation."""
        t = cls.__new__(cls)
        t.data = None
        t._shape = tuple(int(s) for s in shape)
        t.requires_grad = False
        t.grad = None
        t._ctx = None
        t._retain = False
        t._freed = False
        return t

    @property
    def is_meta(self) -> bool:
        return self.data is None

    @property
    def shape(self) -> tuple[int, ...]:
        return self._shape

    @property
    def ndim(self) -> int:
        return len(self._shape)

    @property
    def size(self) -> int:
        return int(np.prod(self._shape))

    def numpy(self) -> np.ndarray:
        if self.data is None:
            raise ValueError("meta tensor has no data")
        return self.data

    def item(self) -> float:
        if self.size != 1:
            raise ValueError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        if self.is_meta:
            return Tensor.meta(self.shape)
        return Tensor(self.data, requires_grad=False)

    def retain_grad(self) -> "Tensor":
        """Keep the gradient of a non-leaf tensor after :func:`backward`."""
        self._retain = True
        return self

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        if self.is_meta:
            return f"Tensor(meta, shape={self.shape})"
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # arithmetic sugar; see ops.py for the kernels
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        from . import ops

        if isinstance(other, Tensor):
            return ops.add(self, ops.affine(other, -1.0, 0.0))
        return ops.affine(self, 1.0, -float(other))

    def __rsub__(self, other):
        from . import ops

        return ops.affine(self, -1.0, float(other))

    def __neg__(self):
        from . import ops

        return ops.affine(self, -1.0, 0.0)

    def sum(self) -> "Tensor":
        from . import ops

        return ops.sum_all(self)

    def mean(self) -> "Tensor":
        from . import ops

        return ops.mean_all(self)

    def reshape(self, *shape) -> "Tensor":
        from . import ops

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)


TensorLike = Union[Tensor, np.ndarray, float, int, Sequence[float]]


class Function:
    """Base class of differentiable operations.

    Subclasses implement ``forward`` on raw arrays, ``backward`` returning one
    gradient (or ``None``) per positional input, and ``infer`` returning the
    output shape and FLOP count from input shapes alone.
    """

    name: str = ""

    def __init__(self) -> None:
        self.parents: tuple[Optional[Tensor], ...] = ()

    def forward(self, *arrays, **kwargs) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError

    def infer(self, *shapes, **kwargs) -> tuple[tuple[int, ...], int]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs: Optional[Tensor], **kwargs) -> Tensor:
        fn = cls()
        op = cls.name or cls.__name__.lower()
        present = [t for t in inputs if t is not None]
        counter = active_counter()
        if any(t.is_meta for t in present):
            shape, flops = fn.infer(*[None if t is None else t.shape for t in inputs], **kwargs)
            if counter is not None:
                counter.record(op, flops)
            return Tensor.meta(shape)

        out = fn.forward(*[None if t is None else t.data for t in inputs], **kwargs)
        if counter is not None:
            _, flops = fn.infer(*[None if t is None else t.shape for t in inputs], **kwargs)
            counter.record(op, flops)
        needs_grad = _grad_enabled() and any(t.requires_grad for t in present)
        result = Tensor(out, requires_grad=needs_grad)
        if needs_grad:
            fn.parents = inputs
            result._ctx = fn
        return result


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        if node._ctx is not None:
            for parent in node._ctx.parents:
                if parent is not None and parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
    return order


def backward(loss: Tensor, retain_graph: bool = False) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every reachable leaf.

    Gradients are added to existing buffers; callers zero them between steps.
    Non-leaf tensors keep their gradient only after :meth:`Tensor.retain_grad`.
    Unless ``retain_graph`` is set the graph is released afterwards and a
    second call on the same loss raises ``RuntimeError``.
    """
    if loss.shape != (1,):
        raise ValueError(f"backward needs a scalar loss of shape (1,), got {loss.shape}")
    if loss._freed:
        raise RuntimeError("graph already released; pass retain_graph=True to backward twice")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tensor that requires grad")

    order = _toposort(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones(1, dtype=DTYPE)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._ctx is None or node._retain:
            if node.grad is None:
                node.grad = np.array(g, dtype=DTYPE, copy=True)
            else:
                node.grad += g
        fn = node._ctx
        if fn is None:
            continue
        in_grads = fn.backward(g)
        for parent, pg in zip(fn.parents, in_grads):
            if parent is None or pg is None or not parent.requires_grad:
                continue
            pg = np.asarray(pg, dtype=DTYPE)
            if pg.shape != parent.shape:
                raise RuntimeError(
                    f"{type(fn).__name__}.backward produced grad {pg.shape} for input {parent.shape}"
                )
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    if not retain_graph:
        for node in order:
            if node._ctx is not None:
                node._ctx = None
        loss._freed = True


def as_tensor(value: TensorLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)
