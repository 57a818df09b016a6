"""Elementwise, reduction and shape operations."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import DTYPE, Function, Tensor, as_tensor


def _numel(shape) -> int:
    return int(np.prod(shape))


def _channel_view(a_shape, b_shape):
    """Shape to which ``b`` must be viewed to broadcast over ``a``, or None if equal.

    Only the per-channel cases used by the network are accepted: ``b`` equal to
    ``a``, or ``b`` of shape (C,), (1,C,1,1) or (N,C,1,1) against NCHW ``a``.
    """
    a_shape, b_shape = tuple(a_shape), tuple(b_shape)
    if a_shape == b_shape:
        return None
    if len(a_shape) == 4:
        n, c = a_shape[0], a_shape[1]
        if b_shape == (c,) or b_shape == (1, c, 1, 1):
            return (1, c, 1, 1)
        if b_shape == (n, c, 1, 1):
            return (n, c, 1, 1)
    raise ValueError(
        f"cannot broadcast {b_shape} against {a_shape}: "
        "only equal shapes or a per-channel vector are supported"
    )


def _reduce_to(grad: np.ndarray, view, b_shape) -> np.ndarray:
    if view is None:
        return grad
    axes = (0, 2, 3) if view[0] == 1 else (2, 3)
    return grad.sum(axis=axes, keepdims=True).reshape(b_shape)


class Add(Function):
    def forward(self, a, b):
        self.view = _channel_view(a.shape, b.shape)
        self.b_shape = b.shape
        return a + (b if self.view is None else b.reshape(self.view))

    def backward(self, grad):
        return grad, _reduce_to(grad, self.view, self.b_shape)

    def infer(self, a, b):
        _channel_view(a, b)
        return a, _numel(a)


class Mul(Function):
    def forward(self, a, b):
        self.view = _channel_view(a.shape, b.shape)
        self.b_shape = b.shape
        bv = b if self.view is None else b.reshape(self.view)
        self.a, self.bv = a, bv
        return a * bv

    def backward(self, grad):
        ga = grad * self.bv
        gb = _reduce_to(grad * self.a, self.view, self.b_shape)
        return ga, gb

    def infer(self, a, b):
        _channel_view(a, b)
        return a, _numel(a)


class Affine(Function):
    """y = scale * x + shift with Python scalars."""

    def forward(self, x, scale=1.0, shift=0.0):
        self.scale = DTYPE(scale)
        out = x * self.scale if scale != 1.0 else x.copy()
        if shift != 0.0:
            out += DTYPE(shift)
        return out

    def backward(self, grad):
        return (grad * self.scale,)

    def infer(self, x, scale=1.0, shift=0.0):
        return x, _numel(x)


def _order(a: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    # commutative ops: keep the full-size operand first
    if a.ndim < b.ndim or (a.ndim == b.ndim and _numel(a.shape) < _numel(b.shape)):
        return b, a
    return a, b


def add(a, b) -> Tensor:
    """Elementwise sum with per-channel broadcasting of the smaller operand."""
    if not isinstance(b, Tensor) and np.isscalar(b):
        return Affine.apply(as_tensor(a), scale=1.0, shift=float(b))
    if not isinstance(a, Tensor) and np.isscalar(a):
        return Affine.apply(as_tensor(b), scale=1.0, shift=float(a))
    a, b = _order(as_tensor(a), as_tensor(b))
    return Add.apply(a, b)


def mul(a, b) -> Tensor:
    """Elementwise product with per-channel broadcasting of the smaller operand."""
    if not isinstance(b, Tensor) and np.isscalar(b):
        return Affine.apply(as_tensor(a), scale=float(b), shift=0.0)
    if not isinstance(a, Tensor) and np.isscalar(a):
        return Affine.apply(as_tensor(b), scale=float(a), shift=0.0)
    a, b = _order(as_tensor(a), as_tensor(b))
    return Mul.apply(a, b)


def affine(x: Tensor, scale: float, shift: float) -> Tensor:
    return Affine.apply(x, scale=scale, shift=shift)


class SumAll(Function):
    def forward(self, x):
        self.shape = x.shape
        return np.asarray([x.sum(dtype=DTYPE)], dtype=DTYPE)

    def backward(self, grad):
        return (np.full(self.shape, grad[0], dtype=DTYPE),)

    def infer(self, x):
        return (1,), _numel(x)


class MeanAll(Function):
    def forward(self, x):
        self.shape = x.shape
        return np.asarray([x.mean(dtype=DTYPE)], dtype=DTYPE)

    def backward(self, grad):
        return (np.full(self.shape, grad[0] / _numel(self.shape), dtype=DTYPE),)

    def infer(self, x):
        return (1,), _numel(x)


def sum_all(x: Tensor) -> Tensor:
    return SumAll.apply(x)


def mean_all(x: Tensor) -> Tensor:
    return MeanAll.apply(x)


class Reshape(Function):
    def forward(self, x, shape=()):
        self.in_shape = x.shape
        return x.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.in_shape),)

    def infer(self, x, shape=()):
        return tuple(shape), 0


def reshape(t: Tensor, shape: Sequence[int]) -> Tensor:
    """Row-major reshape; one dimension may be -1."""
    shape = tuple(int(s) for s in shape)
    n = t.size
    if shape.count(-1) > 1:
        raise ValueError("only one dimension may be -1")
    if -1 in shape:
        rest = _numel([s for s in shape if s != -1])
        if rest == 0 or n % rest:
            raise ValueError(f"cannot reshape {t.shape} into {shape}")
        shape = tuple(n // rest if s == -1 else s for s in shape)
    if _numel(shape) != n:
        raise ValueError(f"cannot reshape {t.shape} ({n} elements) into {shape}")
    if any(s <= 0 for s in shape) or not 1 <= len(shape) <= 4:
        raise ValueError(f"invalid target shape {shape}")
    return Reshape.apply(t, shape=shape)


class ConcatChannels(Function):
    def forward(self, *xs):
        self.sizes = [x.shape[1] for x in xs]
        return np.concatenate(xs, axis=1)

    def backward(self, grad):
        edges = np.cumsum([0] + self.sizes)
        return tuple(grad[:, edges[i] : edges[i + 1]] for i in range(len(self.sizes)))

    def infer(self, *shapes):
        _check_concat(shapes)
        n, _, h, w = shapes[0]
        return (n, sum(s[1] for s in shapes), h, w), 0


def _check_concat(shapes):
    first = shapes[0]
    for i, s in enumerate(shapes):
        if len(s) != 4:
            raise ValueError(f"concat_channels needs NCHW tensors, input {i} has shape {s}")
        for dim, name in ((0, "N"), (2, "H"), (3, "W")):
            if s[dim] != first[dim]:
                raise ValueError(
                    f"concat_channels: input {i} has {name}={s[dim]}, expected {first[dim]}"
                )


def concat_channels(tensors: Sequence[Tensor]) -> Tensor:
    if not tensors:
        raise ValueError("concat_channels needs at least one tensor")
    _check_concat([t.shape for t in tensors])
    return ConcatChannels.apply(*tensors)


class SliceChannels(Function):
    def forward(self, x, start=0, stop=0):
        self.in_shape, self.start, self.stop = x.shape, start, stop
        return x[:, start:stop].copy()

    def backward(self, grad):
        g = np.zeros(self.in_shape, dtype=DTYPE)
        g[:, self.start : self.stop] = grad
        return (g,)

    def infer(self, x, start=0, stop=0):
        return (x[0], stop - start, x[2], x[3]), 0


def split_channels(t: Tensor, sizes: Sequence[int]) -> list[Tensor]:
    """Inverse of :func:`concat_channels` for the given channel sizes."""
    if sum(sizes) != t.shape[1]:
        raise ValueError(f"split sizes {list(sizes)} do not sum to {t.shape[1]} channels")
    out, start = [], 0
    for s in sizes:
        out.append(SliceChannels.apply(t, start=start, stop=start + s))
        start += s
    return out


class Relu(Function):
    def forward(self, x):
        self.mask = x > 0
        return np.where(self.mask, x, DTYPE(0))

    def backward(self, grad):
        return (grad * self.mask,)

    def infer(self, x):
        return x, _numel(x)


_SIG_LO = np.finfo(DTYPE).tiny
_SIG_HI = np.nextafter(DTYPE(1), DTYPE(0))


class Sigmoid(Function):
    def forward(self, x):
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        e = np.exp(x[~pos])
        out[~pos] = e / (1.0 + e)
        # keep the open interval (0, 1) even where float32 rounds to an endpoint
        np.clip(out, _SIG_LO, _SIG_HI, out=out)
        self.out = out
        return out

    def backward(self, grad):
        return (grad * self.out * (1 - self.out),)

    def infer(self, x):
        return x, _numel(x)


def relu(x: Tensor) -> Tensor:
    return Relu.apply(x)


def sigmoid(x: Tensor) -> Tensor:
    return Sigmoid.apply(x)
