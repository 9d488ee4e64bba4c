"""Reverse-mode automatic differentiation on dense float64 numpy arrays.

A Tensor wraps an ndarray plus an optional gradient closure recorded at
construction time. backward() walks the recorded graph in reverse creation
order and accumulates gradients into .grad. Every op output is checked for
NaN/Inf (toggleable) so numerical blow-ups fail loudly at the op that
produced them instead of ten layers later.
"""

from __future__ import annotations

import itertools

import numpy as np

__all__ = [
    "Tensor",
    "NonFiniteError",
    "set_finite_checks",
    "backward",
    "grad_check",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "pow_const",
    "matmul",
    "transpose",
    "reshape",
    "reduce_sum",
    "reduce_mean",
    "reduce_max",
    "exp",
    "log",
    "sqrt",
    "relu",
    "gelu",
    "tanh",
    "sigmoid",
    "clip",
    "softmax_lastdim",
    "logsumexp_lastdim",
    "gather",
    "concat",
    "layer_norm",
    "conv2d_3x3",
    "depthwise_conv3x3",
    "conv_transpose2x2",
    "upsample2x_bilinear",
]


class NonFiniteError(FloatingPointError):
    """Raised when an op produces NaN or Inf and finite checks are on."""


_FINITE_CHECKS = True
_NEXT_ID = itertools.count()


def set_finite_checks(enabled):
    """Globally enable/disable NaN/Inf output checks. Returns previous value."""
    global _FINITE_CHECKS
    prev = _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)
    return prev


class Tensor:
    """A float64 array node in the differentiation graph."""

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_vjp", "_id")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.op = "leaf"
        self._parents = ()
        self._vjp = None
        self._id = next(_NEXT_ID)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    # operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __pow__(self, p):
        return pow_const(self, p)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def max(self, axis=None, keepdims=False):
        return reduce_max(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, op, vjp):
    """Build a graph node; records the vjp only if some parent needs grad."""
    out = Tensor(data)
    out.op = op
    if _FINITE_CHECKS and not np.all(np.isfinite(out.data)):
        raise NonFiniteError(f"non-finite values in output of op '{op}'")
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _unbroadcast(grad, shape):
    """Sum grad down to `shape` (reverse of numpy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    with np.errstate(all="ignore"):
        data = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _node(data, (a, b), "add", vjp)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    with np.errstate(all="ignore"):
        data = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _node(data, (a, b), "sub", vjp)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    with np.errstate(all="ignore"):
        data = a.data * b.data

    def vjp(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _node(data, (a, b), "mul", vjp)


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    with np.errstate(all="ignore"):
        data = a.data / b.data

    def vjp(g):
        return (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        )

    return _node(data, (a, b), "div", vjp)


def neg(a):
    a = _as_tensor(a)

    def vjp(g):
        return (-g,)

    return _node(-a.data, (a,), "neg", vjp)


def pow_const(a, p):
    a = _as_tensor(a)
    p = float(p)
    with np.errstate(all="ignore"):
        data = a.data**p

    def vjp(g):
        with np.errstate(all="ignore"):
            return (g * p * a.data ** (p - 1.0),)

    return _node(data, (a,), f"pow[{p}]", vjp)


# ---------------------------------------------------------------------------
# shape ops


def matmul(a, b):
    """Matrix product; 2-D or equal-batch N-D (no batch broadcasting)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError("matmul expects tensors of rank >= 2")
    if a.data.shape[:-2] != b.data.shape[:-2]:
        raise ValueError(
            f"matmul batch dims must match exactly, got {a.data.shape} @ {b.data.shape}"
        )
    data = np.matmul(a.data, b.data)

    def vjp(g):
        return (
            np.matmul(g, np.swapaxes(b.data, -1, -2)),
            np.matmul(np.swapaxes(a.data, -1, -2), g),
        )

    return _node(data, (a, b), "matmul", vjp)


def transpose(a, axes=None):
    a = _as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.data.ndim)))
    axes = tuple(axes)
    inv = np.argsort(axes)

    def vjp(g):
        return (np.transpose(g, inv),)

    return _node(np.transpose(a.data, axes), (a,), "transpose", vjp)


def reshape(a, shape):
    a = _as_tensor(a)
    orig = a.data.shape

    def vjp(g):
        return (g.reshape(orig),)

    return _node(a.data.reshape(shape), (a,), "reshape", vjp)


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(data, tuple(tensors), "concat", vjp)


def gather(a, indices, axis=0):
    """Take entries along an axis (scalar or 1-D indices); backward scatter-adds."""
    a = _as_tensor(a)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim > 1:
        raise ValueError("gather supports scalar or 1-D indices only")
    data = np.take(a.data, idx, axis=axis)

    def vjp(g):
        out = np.zeros_like(a.data)
        moved = np.moveaxis(out, axis, 0)
        if idx.ndim == 0:
            np.add.at(moved, int(idx), g)
        else:
            np.add.at(moved, idx, np.moveaxis(g, axis, 0))
        return (out,)

    return _node(data, (a,), "gather", vjp)


# ---------------------------------------------------------------------------
# reductions


def reduce_sum(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g2, a.data.shape).copy(),)

    return _node(data, (a,), "sum", vjp)


def reduce_mean(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    data = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]
    )

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g / count, a.data.shape).copy(),)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g2 / count, a.data.shape).copy(),)

    return _node(data, (a,), "mean", vjp)


def reduce_max(a, axis=None, keepdims=False):
    """Max reduction; ties route the gradient to the first max (flat order)."""
    a = _as_tensor(a)
    data = a.data.max(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            mask = np.zeros_like(a.data)
            mask.flat[int(np.argmax(a.data))] = 1.0
            return (mask * g,)
        full = data if keepdims else np.expand_dims(data, axis)
        hit = a.data == full
        first = np.cumsum(hit, axis=axis) == 1
        mask = (hit & first).astype(np.float64)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (mask * g2,)

    return _node(data, (a,), "max", vjp)


# ---------------------------------------------------------------------------
# elementwise nonlinearities


def exp(a):
    a = _as_tensor(a)
    with np.errstate(all="ignore"):
        data = np.exp(a.data)

    def vjp(g):
        return (g * data,)

    return _node(data, (a,), "exp", vjp)


def log(a):
    a = _as_tensor(a)
    with np.errstate(all="ignore"):
        data = np.log(a.data)

    def vjp(g):
        return (g / a.data,)

    return _node(data, (a,), "log", vjp)


def sqrt(a):
    a = _as_tensor(a)
    with np.errstate(all="ignore"):
        data = np.sqrt(a.data)

    def vjp(g):
        return (g * 0.5 / data,)

    return _node(data, (a,), "sqrt", vjp)


def relu(a):
    a = _as_tensor(a)
    data = np.maximum(a.data, 0.0)

    def vjp(g):
        return (g * (a.data > 0.0),)

    return _node(data, (a,), "relu", vjp)


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a):
    """Tanh-approximation GELU: 0.5*x*(1 + tanh(c*(x + 0.044715*x^3)))."""
    a = _as_tensor(a)
    x = a.data
    x2 = x * x
    t = np.tanh(_GELU_C * (x + 0.044715 * x2 * x))
    data = 0.5 * x * (1.0 + t)

    def vjp(g):
        dinner = _GELU_C * (1.0 + 3.0 * 0.044715 * x2)
        d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
        return (g * d,)

    return _node(data, (a,), "gelu", vjp)


def tanh(a):
    a = _as_tensor(a)
    data = np.tanh(a.data)

    def vjp(g):
        return (g * (1.0 - data * data),)

    return _node(data, (a,), "tanh", vjp)


def sigmoid(a):
    a = _as_tensor(a)
    data = np.where(a.data >= 0, 1.0 / (1.0 + np.exp(-np.abs(a.data))),
                    np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))))

    def vjp(g):
        return (g * data * (1.0 - data),)

    return _node(data, (a,), "sigmoid", vjp)


def clip(a, lo, hi):
    """Clamp values; gradient passes only where the input was inside [lo, hi]."""
    a = _as_tensor(a)
    data = np.clip(a.data, lo, hi)

    def vjp(g):
        return (g * ((a.data >= lo) & (a.data <= hi)),)

    return _node(data, (a,), "clip", vjp)


def softmax_lastdim(a):
    """Numerically stable softmax over the last axis."""
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        dot = (g * data).sum(axis=-1, keepdims=True)
        return (data * (g - dot),)

    return _node(data, (a,), "softmax", vjp)


def logsumexp_lastdim(a):
    """Stable log(sum(exp(a))) over the last axis (keeps the axis collapsed)."""
    a = _as_tensor(a)
    m = a.data.max(axis=-1, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=-1, keepdims=True)
    data = (m + np.log(s)).squeeze(-1)

    def vjp(g):
        soft = e / s
        return (np.expand_dims(g, -1) * soft,)

    return _node(data, (a,), "logsumexp", vjp)


def layer_norm(x, gain, bias, eps=1e-6):
    """Normalize over the last axis, then scale and shift."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    data = xhat * gain.data + bias.data

    def vjp(g):
        dgain = _unbroadcast(g * xhat, gain.data.shape)
        dbias = _unbroadcast(g, bias.data.shape)
        dxhat = g * gain.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = inv * (dxhat - m1 - xhat * m2)
        return dx, dgain, dbias

    return _node(data, (x, gain, bias), "layer_norm", vjp)


# ---------------------------------------------------------------------------
# conv / resize ops (channels-first, single image)


def conv2d_3x3(x, kernel, bias):
    """3x3 same-padding convolution. x: (Cin,H,W), kernel: (Cout,Cin,3,3), bias: (Cout,)."""
    x, kernel, bias = _as_tensor(x), _as_tensor(kernel), _as_tensor(bias)
    cin, h, w = x.data.shape
    cout = kernel.data.shape[0]
    if kernel.data.shape != (cout, cin, 3, 3):
        raise ValueError(f"kernel shape {kernel.data.shape} does not match input channels {cin}")
    xp = np.pad(x.data, ((0, 0), (1, 1), (1, 1)))
    # cols[cin*9, h*w] with patch element order (cin, dy, dx)
    win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(1, 2))
    cols = win.transpose(0, 3, 4, 1, 2).reshape(cin * 9, h * w)
    kmat = kernel.data.reshape(cout, cin * 9)
    data = (kmat @ cols).reshape(cout, h, w) + bias.data[:, None, None]

    def vjp(g):
        gm = g.reshape(cout, h * w)
        dk = (gm @ cols.T).reshape(cout, cin, 3, 3)
        db = gm.sum(axis=1)
        dcols = (kmat.T @ gm).reshape(cin, 3, 3, h, w)
        dxp = np.zeros_like(xp)
        for dy in range(3):
            for dx in range(3):
                dxp[:, dy:dy + h, dx:dx + w] += dcols[:, dy, dx]
        return dxp[:, 1:-1, 1:-1], dk, db

    return _node(data, (x, kernel, bias), "conv2d_3x3", vjp)


def depthwise_conv3x3(x, kernel, bias):
    """Per-channel 3x3 same-padding convolution. kernel: (C,3,3), bias: (C,)."""
    x, kernel, bias = _as_tensor(x), _as_tensor(kernel), _as_tensor(bias)
    c, h, w = x.data.shape
    if kernel.data.shape != (c, 3, 3):
        raise ValueError(f"depthwise kernel shape {kernel.data.shape} does not match channels {c}")
    xp = np.pad(x.data, ((0, 0), (1, 1), (1, 1)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(1, 2))  # (c,h,w,3,3)
    data = np.einsum("chwuv,cuv->chw", win, kernel.data) + bias.data[:, None, None]

    def vjp(g):
        dk = np.einsum("chwuv,chw->cuv", win, g)
        db = g.sum(axis=(1, 2))
        dxp = np.zeros_like(xp)
        for dy in range(3):
            for dx in range(3):
                dxp[:, dy:dy + h, dx:dx + w] += kernel.data[:, dy, dx][:, None, None] * g
        return dxp[:, 1:-1, 1:-1], dk, db

    return _node(data, (x, kernel, bias), "depthwise_conv3x3", vjp)


def conv_transpose2x2(x, kernel, bias):
    """Stride-2 2x2 transposed convolution (exact 2x upscale).

    x: (Cin,H,W) or batched (B,Cin,H,W), kernel: (Cin,Cout,2,2), bias:
    (Cout,) -> (Cout,2H,2W) / (B,Cout,2H,2W).
    """
    x, kernel, bias = _as_tensor(x), _as_tensor(kernel), _as_tensor(bias)
    batched = x.data.ndim == 4
    xd = x.data if batched else x.data[None]
    b, cin, h, w = xd.shape
    if kernel.data.shape[0] != cin or kernel.data.shape[2:] != (2, 2):
        raise ValueError(f"kernel shape {kernel.data.shape} does not match input channels {cin}")
    cout = kernel.data.shape[1]
    t = np.tensordot(xd, kernel.data, axes=([1], [0]))  # (b,h,w,cout,2,2)
    data = t.transpose(0, 3, 1, 4, 2, 5).reshape(b, cout, 2 * h, 2 * w) + bias.data[:, None, None]
    if not batched:
        data = data[0]

    def vjp(g):
        gb = g if batched else g[None]
        gt = gb.reshape(b, cout, h, 2, w, 2).transpose(0, 2, 4, 1, 3, 5)  # (b,h,w,cout,2,2)
        dx = np.tensordot(gt, kernel.data, axes=([3, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        dk = np.tensordot(xd, gt, axes=([0, 2, 3], [0, 1, 2]))  # (cin,cout,2,2)
        db = gb.sum(axis=(0, 2, 3))
        return (dx if batched else dx[0]), dk, db

    return _node(data, (x, kernel, bias), "conv_transpose2x2", vjp)


def _bilinear_coeffs(n):
    """Source indices and blend weights for 2x upscale of an axis of length n."""
    src = (np.arange(2 * n) + 0.5) / 2.0 - 0.5
    src = np.clip(src, 0.0, n - 1.0)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n - 1)
    w1 = src - i0
    return i0, i1, w1


def upsample2x_bilinear(x):
    """Fixed (non-learned) 2x bilinear upsampling of (..., H, W), half-pixel centres."""
    x = _as_tensor(x)
    if x.data.ndim < 3:
        raise ValueError(f"expected at least 3 dims, got shape {x.data.shape}")
    h, w = x.data.shape[-2:]
    y0, y1, wy = _bilinear_coeffs(h)
    x0, x1, wx = _bilinear_coeffs(w)
    wy_ = wy[:, None]
    top = x.data[..., y0, :]
    bot = x.data[..., y1, :]
    rows = top * (1.0 - wy_) + bot * wy_  # (..., 2h, w)
    data = rows[..., x0] * (1.0 - wx) + rows[..., x1] * wx

    def vjp(g):
        drows = np.zeros(x.data.shape[:-2] + (2 * h, w))
        np.add.at(drows, (Ellipsis, x0), g * (1.0 - wx))
        np.add.at(drows, (Ellipsis, x1), g * wx)
        dx = np.zeros_like(x.data)
        np.add.at(dx, (Ellipsis, y0, slice(None)), drows * (1.0 - wy_))
        np.add.at(dx, (Ellipsis, y1, slice(None)), drows * wy_)
        return (dx,)

    return _node(data, (x,), "upsample2x_bilinear", vjp)


# ---------------------------------------------------------------------------
# backward pass and finite-difference checking


def backward(loss):
    """Accumulate d(loss)/d(tensor) into .grad for every reachable tensor.

    Returns a map {tensor id: gradient array} for the tensors that received a
    gradient during this pass. Calling twice doubles the accumulated .grad.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward expects a scalar loss, got shape {loss.data.shape}")
    order = []
    seen = {loss._id}
    stack = [loss]
    while stack:
        t = stack.pop()
        order.append(t)
        for p in t._parents:
            if p._id not in seen and p.requires_grad:
                seen.add(p._id)
                stack.append(p)
    order.sort(key=lambda t: t._id, reverse=True)

    flowing = {loss._id: np.ones_like(loss.data)}
    result = {}
    for t in order:
        g = flowing.pop(t._id, None)
        if g is None:
            continue
        if t.requires_grad:
            t.grad = g if t.grad is None else t.grad + g
            result[t._id] = g
        if t._vjp is None:
            continue
        for parent, pg in zip(t._parents, t._vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            if _FINITE_CHECKS and not np.all(np.isfinite(pg)):
                raise NonFiniteError(f"non-finite gradient flowing out of op '{t.op}'")
            pg = np.asarray(pg, dtype=np.float64)
            have = flowing.get(parent._id)
            flowing[parent._id] = pg if have is None else have + pg
    return result


def grad_check(f, inputs, eps=1e-5, max_coords_per_tensor=None, rng=None, atol=None):
    """Compare analytic gradients of scalar f(*inputs) against central differences.

    Returns the maximum relative error |a - n| / max(1e-12, |a| + |n|) over
    the checked coordinates. With max_coords_per_tensor set, coordinates are
    subsampled per input using the supplied RNG (seeded 0 by default).

    With atol set, coordinates where both |a| and |n| fall below it are
    skipped: central differences at eps carry O(ulp(f)/eps) rounding noise,
    so gradients below that floor (e.g. directions the function is exactly
    invariant to) cannot be resolved and their relative error is meaningless.
    """
    inputs = list(inputs)
    for t in inputs:
        if not isinstance(t, Tensor):
            raise TypeError("grad_check inputs must be Tensors")
        t.requires_grad = True
        t.grad = None

    out = f(*inputs)
    if out.data.size != 1:
        raise ValueError("grad_check requires a scalar-valued function")
    backward(out)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    if rng is None:
        rng = np.random.default_rng(0)
    worst = 0.0
    for t, a in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        n = flat.size
        if max_coords_per_tensor is not None and n > max_coords_per_tensor:
            coords = np.sort(rng.choice(n, size=max_coords_per_tensor, replace=False))
        else:
            coords = range(n)
        aflat = a.reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(f(*inputs).data)
            flat[i] = orig - eps
            lo = float(f(*inputs).data)
            flat[i] = orig
            numeric = (hi - lo) / (2.0 * eps)
            if atol is not None and max(abs(aflat[i]), abs(numeric)) < atol:
                continue
            err = abs(aflat[i] - numeric) / max(1e-12, abs(aflat[i]) + abs(numeric))
            if err > worst:
                worst = err
    return worst
