"""Spatial NCHW operations: convolution, batch norm, pooling and resizing."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import DTYPE, Function, Tensor

# upper bound on the im2col buffer, in elements (64 MB of float32)
_COL_BUDGET = 16 * 1024 * 1024


def _pair(v) -> tuple[int, int]:
    if isinstance(v, int):
        return v, v
    a, b = v
    return int(a), int(b)


def _quad(p) -> tuple[int, int, int, int]:
    """Padding as (top, bottom, left, right)."""
    if isinstance(p, int):
        return p, p, p, p
    p = tuple(int(v) for v in p)
    if len(p) == 2:
        return p[0], p[0], p[1], p[1]
    if len(p) == 4:
        return p
    raise ValueError(f"padding must be an int, a pair or (top, bottom, left, right), got {p}")


def conv_output_size(h: int, w: int, kh: int, kw: int, stride, padding) -> tuple[int, int]:
    sh, sw = _pair(stride)
    pt, pb, pl, pr = _quad(padding)
    return (h + pt + pb - kh) // sh + 1, (w + pl + pr - kw) // sw + 1


def _check_conv(x_shape, w_shape, b_shape, stride, padding):
    if len(x_shape) != 4:
        raise ValueError(f"conv2d input must be NCHW, got shape {x_shape}")
    if len(w_shape) != 4:
        raise ValueError(f"conv2d weight must be (Cout, Cin, kh, kw), got shape {w_shape}")
    n, cin, h, w = x_shape
    cout, wcin, kh, kw = w_shape
    if cin != wcin:
        raise ValueError(f"conv2d: input has Cin={cin} channels but weight expects Cin={wcin}")
    if b_shape is not None and tuple(b_shape) != (cout,):
        raise ValueError(f"conv2d: bias shape {tuple(b_shape)} does not match Cout={cout}")
    sh, sw = _pair(stride)
    if sh < 1 or sw < 1:
        raise ValueError(f"conv2d: stride must be positive, got {(sh, sw)}")
    pt, pb, pl, pr = _quad(padding)
    if h + pt + pb < kh:
        raise ValueError(f"conv2d: padded height {h + pt + pb} is smaller than kernel height {kh}")
    if w + pl + pr < kw:
        raise ValueError(f"conv2d: padded width {w + pl + pr} is smaller than kernel width {kw}")
    ho, wo = conv_output_size(h, w, kh, kw, (sh, sw), (pt, pb, pl, pr))
    return (n, cout, ho, wo)


def _row_blocks(ho: int, per_row: int):
    rows = max(1, _COL_BUDGET // max(per_row, 1))
    for r0 in range(0, ho, rows):
        yield r0, min(ho, r0 + rows)


class Conv2d(Function):
    def forward(self, x, w, b=None, stride=(1, 1), padding=(0, 0, 0, 0)):
        out_shape = _check_conv(x.shape, w.shape, None if b is None else b.shape, stride, padding)
        n, cout, ho, wo = out_shape
        self.stride = sh, sw = _pair(stride)
        self.pad = pt, pb, pl, pr = _quad(padding)
        self.x_shape, self.w = x.shape, w
        self.has_bias = b is not None
        cin, kh, kw = w.shape[1:]
        self.pointwise = kh == kw == 1 and (sh, sw) == (1, 1) and self.pad == (0, 0, 0, 0)

        if self.pointwise:
            self.xp = x
            out = np.matmul(w.reshape(cout, cin), x.reshape(n, cin, -1)).reshape(out_shape)
        else:
            xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr))) if any(self.pad) else x
            self.xp = xp
            wm = w.reshape(cout, -1)
            out = np.empty(out_shape, dtype=DTYPE)
            for r0, r1 in _row_blocks(ho, n * cin * kh * kw * wo):
                cols = self._cols(r0, r1, ho, wo)
                out[:, :, r0:r1] = np.matmul(wm, cols).reshape(n, cout, r1 - r0, wo)
        if b is not None:
            out += b.reshape(1, cout, 1, 1)
        return out

    def _cols(self, r0, r1, ho, wo):
        """im2col of output rows [r0, r1): shape (N, Cin*kh*kw, rows*Wo)."""
        n, cin = self.xp.shape[:2]
        kh, kw = self.w.shape[2:]
        sh, sw = self.stride
        win = sliding_window_view(self.xp, (kh, kw), axis=(2, 3))
        win = win[:, :, r0 * sh : (r1 - 1) * sh + 1 : sh, : (wo - 1) * sw + 1 : sw]
        win = win.transpose(0, 1, 4, 5, 2, 3)
        return win.reshape(n, cin * kh * kw, (r1 - r0) * wo)

    def backward(self, grad):
        w = self.w
        cout, cin, kh, kw = w.shape
        n, _, ho, wo = grad.shape
        gb = grad.sum(axis=(0, 2, 3)) if self.has_bias else None
        if self.pointwise:
            g = grad.reshape(n, cout, -1)
            x = self.xp.reshape(n, cin, -1)
            gw = np.matmul(g, x.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
            gx = np.matmul(w.reshape(cout, cin).T, g).reshape(self.x_shape)
            return gx, gw, gb

        sh, sw = self.stride
        wm = w.reshape(cout, -1)
        gw = np.zeros(wm.shape, dtype=DTYPE)
        gxp = np.zeros(self.xp.shape, dtype=DTYPE)
        for r0, r1 in _row_blocks(ho, n * cin * kh * kw * wo):
            rows = r1 - r0
            g = np.ascontiguousarray(grad[:, :, r0:r1]).reshape(n, cout, rows * wo)
            cols = self._cols(r0, r1, ho, wo)
            gw += np.matmul(g, cols.transpose(0, 2, 1)).sum(axis=0)
            gcols = np.matmul(wm.T, g).reshape(n, cin, kh, kw, rows, wo)
            for i in range(kh):
                hs = r0 * sh + i
                for j in range(kw):
                    gxp[:, :, hs : hs + (rows - 1) * sh + 1 : sh, j : j + (wo - 1) * sw + 1 : sw] += gcols[
                        :, :, i, j
                    ]
        pt, pb, pl, pr = self.pad
        h, wdt = self.x_shape[2:]
        gx = gxp[:, :, pt : pt + h, pl : pl + wdt]
        return np.ascontiguousarray(gx), gw.reshape(w.shape), gb

    def infer(self, x, w, b=None, stride=(1, 1), padding=(0, 0, 0, 0)):
        out = _check_conv(x, w, b, stride, padding)
        n, cout, ho, wo = out
        return out, 2 * cout * w[1] * w[2] * w[3] * ho * wo * n


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride=1,
    padding=0,
) -> Tensor:
    """2-D cross-correlation.

    ``padding`` is an int, an (h, w) pair, or explicit (top, bottom, left, right)
    so that even kernels can be padded asymmetrically.
    """
    return Conv2d.apply(x, weight, bias, stride=_pair(stride), padding=_quad(padding))


class BatchNorm2d(Function):
    name = "batchnorm2d"

    def forward(self, x, gamma, beta, running_mean=None, running_var=None, training=False,
                momentum=0.1, eps=1e-5):
        if x.ndim != 4:
            raise ValueError(f"batchnorm2d input must be NCHW, got shape {x.shape}")
        c = x.shape[1]
        for name, arr in (("gamma", gamma), ("beta", beta), ("running_mean", running_mean),
                          ("running_var", running_var)):
            if arr.shape != (c,):
                raise ValueError(f"batchnorm2d: {name} has shape {arr.shape}, expected ({c},)")
        self.training = training
        self.gamma = gamma
        if training:
            m = x.shape[0] * x.shape[2] * x.shape[3]
            if m == 0:
                raise ValueError("batchnorm2d: batch x spatial extent is zero in train mode")
            mean = x.mean(axis=(0, 2, 3), dtype=DTYPE)
            xc = x - mean.reshape(1, c, 1, 1)
            var = (xc * xc).mean(axis=(0, 2, 3), dtype=DTYPE)
            invstd = (1.0 / np.sqrt(var + DTYPE(eps))).astype(DTYPE)
            xhat = xc * invstd.reshape(1, c, 1, 1)
            self.xhat, self.invstd, self.m = xhat, invstd, m
            unbiased = var * (m / (m - 1)) if m > 1 else var
            running_mean *= DTYPE(1 - momentum)
            running_mean += DTYPE(momentum) * mean
            running_var *= DTYPE(1 - momentum)
            running_var += DTYPE(momentum) * unbiased.astype(DTYPE)
            return xhat * gamma.reshape(1, c, 1, 1) + beta.reshape(1, c, 1, 1)

        invstd = (1.0 / np.sqrt(running_var + DTYPE(eps))).astype(DTYPE)
        self.invstd = invstd
        self.xhat = (x - running_mean.reshape(1, c, 1, 1)) * invstd.reshape(1, c, 1, 1)
        return self.xhat * gamma.reshape(1, c, 1, 1) + beta.reshape(1, c, 1, 1)

    def backward(self, grad):
        c = grad.shape[1]
        gbeta = grad.sum(axis=(0, 2, 3))
        ggamma = (grad * self.xhat).sum(axis=(0, 2, 3))
        dxhat = grad * self.gamma.reshape(1, c, 1, 1)
        if not self.training:
            return dxhat * self.invstd.reshape(1, c, 1, 1), ggamma, gbeta
        m = self.m
        s1 = dxhat.sum(axis=(0, 2, 3)).reshape(1, c, 1, 1)
        s2 = (dxhat * self.xhat).sum(axis=(0, 2, 3)).reshape(1, c, 1, 1)
        gx = (self.invstd.reshape(1, c, 1, 1) / m) * (m * dxhat - s1 - self.xhat * s2)
        return gx, ggamma, gbeta

    def infer(self, x, gamma, beta, **kwargs):
        if len(x) != 4 or gamma != (x[1],):
            raise ValueError(f"batchnorm2d: bad shapes input={x} gamma={gamma}")
        return x, 2 * int(np.prod(x))


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Batch normalization over (N, H, W) per channel.

    In training mode batch statistics are used and the running buffers are
    updated in place (unbiased variance); in eval mode the running buffers are
    used. The buffers are plain arrays and never receive gradients.
    """
    return BatchNorm2d.apply(
        x, gamma, beta, running_mean=running_mean, running_var=running_var,
        training=training, momentum=momentum, eps=eps,
    )


def adaptive_windows(size: int, out: int) -> list[tuple[int, int]]:
    """Window [start, end) of each adaptive-pooling output index."""
    return [((i * size) // out, -((-(i + 1) * size) // out)) for i in range(out)]


def _pool_matrix(size: int, out: int) -> np.ndarray:
    m = np.zeros((out, size), dtype=DTYPE)
    for i, (s, e) in enumerate(adaptive_windows(size, out)):
        m[i, s:e] = DTYPE(1.0 / (e - s))
    return m


def _check_adaptive(shape, out_h, out_w):
    if len(shape) != 4:
        raise ValueError(f"adaptive_avg_pool2d input must be NCHW, got shape {shape}")
    if out_h < 1 or out_w < 1:
        raise ValueError(f"adaptive_avg_pool2d: target size must be positive, got {(out_h, out_w)}")
    if out_h > shape[2] or out_w > shape[3]:
        raise ValueError(
            f"adaptive_avg_pool2d: target {(out_h, out_w)} exceeds input extent {shape[2:]}"
        )


class AdaptiveAvgPool2d(Function):
    name = "adaptive_avg_pool2d"

    def forward(self, x, out_h=1, out_w=1):
        _check_adaptive(x.shape, out_h, out_w)
        h, w = x.shape[2:]
        self.ph = _pool_matrix(h, out_h)
        self.pw = _pool_matrix(w, out_w)
        self.identity = (out_h, out_w) == (h, w)
        if self.identity:
            return x.copy()
        return np.matmul(np.matmul(self.ph, x), self.pw.T)

    def backward(self, grad):
        if self.identity:
            return (grad,)
        return (np.matmul(np.matmul(self.ph.T, grad), self.pw),)

    def infer(self, x, out_h=1, out_w=1):
        _check_adaptive(x, out_h, out_w)
        hs = sum(e - s for s, e in adaptive_windows(x[2], out_h))
        ws = sum(e - s for s, e in adaptive_windows(x[3], out_w))
        return (x[0], x[1], out_h, out_w), x[0] * x[1] * hs * ws


def adaptive_avg_pool2d(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Average over windows [floor(i*H/oh), ceil((i+1)*H/oh)) per axis."""
    return AdaptiveAvgPool2d.apply(x, out_h=int(out_h), out_w=int(out_w))


class AvgPool2d(Function):
    """Fixed-window average pooling; padded cells count as zeros."""

    name = "avg_pool2d"

    def forward(self, x, kernel=3, stride=2, padding=1):
        self.cfg = kernel, stride, padding
        self.x_shape = x.shape
        k, s, p = kernel, stride, padding
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        n, c, h, w = x.shape
        ho, wo = (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1
        out = np.zeros((n, c, ho, wo), dtype=DTYPE)
        for i in range(k):
            for j in range(k):
                out += xp[:, :, i : i + (ho - 1) * s + 1 : s, j : j + (wo - 1) * s + 1 : s]
        out *= DTYPE(1.0 / (k * k))
        return out

    def backward(self, grad):
        k, s, p = self.cfg
        n, c, h, w = self.x_shape
        ho, wo = grad.shape[2:]
        gxp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=DTYPE)
        g = grad * DTYPE(1.0 / (k * k))
        for i in range(k):
            for j in range(k):
                gxp[:, :, i : i + (ho - 1) * s + 1 : s, j : j + (wo - 1) * s + 1 : s] += g
        return (np.ascontiguousarray(gxp[:, :, p : p + h, p : p + w]),)

    def infer(self, x, kernel=3, stride=2, padding=1):
        n, c, h, w = x
        ho = (h + 2 * padding - kernel) // stride + 1
        wo = (w + 2 * padding - kernel) // stride + 1
        return (n, c, ho, wo), n * c * ho * wo * kernel * kernel


def avg_pool2d(x: Tensor, kernel: int = 3, stride: int = 2, padding: int = 1) -> Tensor:
    return AvgPool2d.apply(x, kernel=kernel, stride=stride, padding=padding)


def bilinear_taps(in_size: int, out_size: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Source indices and blend weight per output index (half-pixel centers).

    src = (dst + 0.5) * in/out - 0.5, clamped below at 0; the second tap is
    clamped to the last valid index.
    """
    scale = in_size / out_size
    src = (np.arange(out_size, dtype=np.float64) + 0.5) * scale - 0.5
    src = np.maximum(src, 0.0)
    i0 = np.minimum(np.floor(src).astype(np.int64), in_size - 1)
    i1 = np.minimum(i0 + 1, in_size - 1)
    lam = (src - i0).astype(DTYPE)
    return i0, i1, lam


def _scatter_sorted(g: np.ndarray, idx: np.ndarray, size: int, axis: int) -> np.ndarray:
    """Sum slices of ``g`` along ``axis`` into positions ``idx`` (non-decreasing)."""
    uniq, starts = np.unique(idx, return_index=True)
    sums = np.add.reduceat(g, starts, axis=axis)
    shape = list(g.shape)
    shape[axis] = size
    out = np.zeros(shape, dtype=DTYPE)
    index = [slice(None)] * g.ndim
    index[axis] = uniq
    out[tuple(index)] = sums
    return out


def _resize_axis(x, taps, axis):
    i0, i1, lam = taps
    shape = [1] * x.ndim
    shape[axis] = -1
    lam = lam.reshape(shape)
    a = np.take(x, i0, axis=axis)
    b = np.take(x, i1, axis=axis)
    return a * (1 - lam) + b * lam


def _resize_axis_grad(g, taps, size, axis):
    i0, i1, lam = taps
    shape = [1] * g.ndim
    shape[axis] = -1
    lam = lam.reshape(shape)
    return _scatter_sorted(g * (1 - lam), i0, size, axis) + _scatter_sorted(g * lam, i1, size, axis)


class BilinearResize(Function):
    name = "bilinear_resize"

    def forward(self, x, out_h=1, out_w=1, align_corners=False):
        if x.ndim != 4:
            raise ValueError(f"bilinear_resize input must be NCHW, got shape {x.shape}")
        if align_corners:
            raise NotImplementedError("only half-pixel centers (align_corners=False) are supported")
        h, w = x.shape[2:]
        self.in_hw = h, w
        self.th = None if out_h == h else bilinear_taps(h, out_h)
        self.tw = None if out_w == w else bilinear_taps(w, out_w)
        out = x
        if self.th is not None:
            out = _resize_axis(out, self.th, 2)
        if self.tw is not None:
            out = _resize_axis(out, self.tw, 3)
        return out.copy() if out is x else out

    def backward(self, grad):
        h, w = self.in_hw
        g = grad
        if self.tw is not None:
            g = _resize_axis_grad(g, self.tw, w, 3)
        if self.th is not None:
            g = _resize_axis_grad(g, self.th, h, 2)
        return (g,)

    def infer(self, x, out_h=1, out_w=1, align_corners=False):
        return (x[0], x[1], out_h, out_w), 8 * x[0] * x[1] * out_h * out_w


def bilinear_resize(x: Tensor, out_h: int, out_w: int, align_corners: bool = False) -> Tensor:
    if out_h < 1 or out_w < 1:
        raise ValueError(f"bilinear_resize: output size must be positive, got {(out_h, out_w)}")
    return BilinearResize.apply(x, out_h=int(out_h), out_w=int(out_w), align_corners=align_corners)
