"""Minimal reverse-mode autodiff engine on dense numpy arrays.

Forward/training math runs in float32; ``double_precision()`` switches new
tensors to float64 for finite-difference gradient verification.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

_DTYPE = np.float32
_GRAD_ENABLED = True
_CHECK_FINITE = False


def default_dtype():
    return _DTYPE


@contextlib.contextmanager
def double_precision():
    """Run the enclosed block with float64 as the default tensor dtype."""
    global _DTYPE
    prev = _DTYPE
    _DTYPE = np.float64
    try:
        yield
    finally:
        _DTYPE = prev


@contextlib.contextmanager
def no_grad():
    """Disable graph construction (inference / evaluation paths)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def set_check_finite(flag: bool):
    """When on, every op asserts its output is finite (test-suite guard)."""
    global _CHECK_FINITE
    _CHECK_FINITE = flag


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, np.ndarray) and data.dtype == _DTYPE:
            self.data = data
        else:
            self.data = np.asarray(data, dtype=_DTYPE)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Callable | None = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def assert_finite(self, ctx: str = ""):
        if not np.all(np.isfinite(self.data)):
            raise FloatingPointError(f"non-finite values in tensor {ctx or self.shape}")
        return self

    # -- autograd ------------------------------------------------------------

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        topo: list[Tensor] = []
        seen = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return slice_(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable | None) -> Tensor:
    if _CHECK_FINITE and not np.all(np.isfinite(data)):
        raise FloatingPointError("op produced non-finite values")
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce gradient g (broadcast result shape) back to the operand shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise binary ------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(out_data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _make(out_data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(out_data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data / b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(out_data, (a, b), backward)


def maximum(a, b) -> Tensor:
    """Elementwise max; on ties the gradient goes to the first operand."""
    a, b = as_tensor(a), as_tensor(b)
    mask = a.data >= b.data
    out_data = np.where(mask, a.data, b.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * mask, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * ~mask, b.shape))

    return _make(out_data, (a, b), backward)


# -- elementwise unary -------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    out_data = x.data * mask

    def backward(g):
        x._accumulate(g * mask)

    return _make(out_data, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    s = expit(x.data).astype(x.data.dtype)

    def backward(g):
        x._accumulate(g * s * (1.0 - s))

    return _make(s, (x,), backward)


def exp(x: Tensor) -> Tensor:
    x = as_tensor(x)
    e = np.exp(x.data)

    def backward(g):
        x._accumulate(g * e)

    return _make(e, (x,), backward)


def log(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out_data = np.log(x.data)

    def backward(g):
        x._accumulate(g / x.data)

    return _make(out_data, (x,), backward)


def sqrt(x: Tensor) -> Tensor:
    x = as_tensor(x)
    r = np.sqrt(x.data)

    def backward(g):
        x._accumulate(g * 0.5 / r)

    return _make(r, (x,), backward)


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    x = as_tensor(x)
    out_data = np.clip(x.data, lo, hi)
    mask = (x.data >= lo) & (x.data <= hi)

    def backward(g):
        x._accumulate(g * mask)

    return _make(out_data, (x,), backward)


# -- shape ops ---------------------------------------------------------------


def reshape(x: Tensor, shape) -> Tensor:
    x = as_tensor(x)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    out_data = x.data.reshape(shape)

    def backward(g):
        x._accumulate(g.reshape(x.shape))

    return _make(out_data, (x,), backward)


def transpose(x: Tensor, axes) -> Tensor:
    x = as_tensor(x)
    if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
        axes = tuple(axes[0])
    inv = np.argsort(axes)

    def backward(g):
        x._accumulate(g.transpose(inv))

    return _make(x.data.transpose(axes), (x,), backward)


def slice_(x: Tensor, idx) -> Tensor:
    x = as_tensor(x)
    out_data = x.data[idx]

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[idx] += g
        x._accumulate(gx)

    return _make(np.ascontiguousarray(out_data), (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        parts = np.split(g, splits, axis=axis)
        for t, p in zip(tensors, parts):
            if t.requires_grad:
                t._accumulate(p)

    return _make(out_data, tensors, backward)


def pad2d(x: Tensor, ph: int, pw: int) -> Tensor:
    """Zero-pad the last two axes by ph rows / pw columns on both sides."""
    x = as_tensor(x)
    if ph < 0 or pw < 0:
        raise ValueError(f"negative padding ({ph}, {pw})")
    widths = [(0, 0)] * (x.ndim - 2) + [(ph, ph), (pw, pw)]
    out_data = np.pad(x.data, widths)

    def backward(g):
        sl = (Ellipsis, slice(ph, g.shape[-2] - ph), slice(pw, g.shape[-1] - pw))
        x._accumulate(g[sl])

    return _make(out_data, (x,), backward)


# -- reductions --------------------------------------------------------------


def sum_(x: Tensor, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    out_data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            gx = np.broadcast_to(g, x.shape)
        elif keepdims:
            gx = np.broadcast_to(g, x.shape)
        else:
            gx = np.broadcast_to(np.expand_dims(g, axis), x.shape)
        x._accumulate(gx)

    return _make(np.asarray(out_data), (x,), backward)


def mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    n = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum_(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


# -- linear algebra ----------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[:-2] != b.shape[:-2]:
        raise ValueError(f"matmul batch dims differ: {a.shape} vs {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul inner dims differ: {a.shape} vs {b.shape}")
    out_data = np.matmul(a.data, b.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.matmul(g, b.data.swapaxes(-1, -2)))
        if b.requires_grad:
            b._accumulate(np.matmul(a.data.swapaxes(-1, -2), g))

    return _make(out_data, (a, b), backward)


def softmax_rows(x: Tensor) -> Tensor:
    """Numerically stable softmax over the last axis."""
    x = as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * s).sum(axis=-1, keepdims=True)
        x._accumulate(s * (g - dot))

    return _make(s, (x,), backward)


def channel_l2_normalize(x: Tensor, eps: float = 1e-8) -> Tensor:
    """Normalize axis 1 (channels) of an [N,C,H,W] tensor to unit L2 norm.

    Vectors with norm <= eps are scaled by 1/eps, so the zero vector maps
    to the zero vector.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = as_tensor(x)
    norm = np.sqrt((x.data * x.data).sum(axis=1, keepdims=True))
    denom = np.maximum(norm, eps)
    out_data = x.data / denom

    def backward(g):
        gd = g / denom
        # where the max picked the norm, the denominator depends on x
        active = norm > eps
        dot = (g * x.data).sum(axis=1, keepdims=True)
        corr = np.where(active, dot * x.data / (np.maximum(norm, eps) ** 2 * denom), 0.0)
        x._accumulate(gd - corr)

    return _make(out_data, (x,), backward)


# -- convolution -------------------------------------------------------------


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int):
    v = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    n, c, ho, wo = v.shape[:4]
    cols = np.ascontiguousarray(v.transpose(0, 2, 3, 1, 4, 5)).reshape(n, ho * wo, c * kh * kw)
    return cols, ho, wo


def _col2im(dcols: np.ndarray, xp_shape, kh: int, kw: int, stride: int, ho: int, wo: int):
    n, c = xp_shape[0], xp_shape[1]
    dxp = np.zeros(xp_shape, dtype=dcols.dtype)
    dv = dcols.reshape(n, ho, wo, c, kh, kw)
    for a in range(kh):
        for b in range(kw):
            dxp[:, :, a : a + ho * stride : stride, b : b + wo * stride : stride] += dv[
                :, :, :, :, a, b
            ].transpose(0, 3, 1, 2)
    return dxp


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """2D cross-correlation with zero padding."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError(f"conv2d expects 4D input/weight, got {x.shape} and {w.shape}")
    n, c, h, wdt = x.shape
    o, cw, kh, kw = w.shape
    if c != cw:
        raise ValueError(f"conv2d channel mismatch: input has {c}, weight expects {cw}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"conv2d kernel dims must be odd, got ({kh}, {kw})")
    if h + 2 * pad < kh or wdt + 2 * pad < kw:
        raise ValueError(
            f"conv2d spatial input ({h}, {wdt}) with pad {pad} smaller than kernel ({kh}, {kw})"
        )
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cols, ho, wo = _im2col(xp, kh, kw, stride)
    wmat = w.data.reshape(o, c * kh * kw)
    out = np.matmul(cols, wmat.T)  # N, Ho*Wo, O
    if bias is not None:
        out += as_tensor(bias).data
    out_data = out.transpose(0, 2, 1).reshape(n, o, ho, wo)

    def backward(g):
        gmat = g.reshape(n, o, ho * wo).transpose(0, 2, 1)  # N, HoWo, O
        if w.requires_grad:
            dw = np.einsum("npo,npk->ok", gmat, cols)
            w._accumulate(dw.reshape(w.shape))
        if bias is not None and bias.requires_grad:
            bias._accumulate(gmat.sum(axis=(0, 1)))
        if x.requires_grad:
            dcols = np.matmul(gmat, wmat)
            dxp = _col2im(dcols, xp.shape, kh, kw, stride, ho, wo)
            if pad:
                dxp = dxp[:, :, pad:-pad, pad:-pad]
            x._accumulate(dxp)

    parents = (x, w) if bias is None else (x, w, as_tensor(bias))
    return _make(out_data, parents, backward)


def conv_transpose2d(x: Tensor, w: Tensor, bias: Tensor | None = None, stride: int = 2) -> Tensor:
    """Transposed convolution multiplying spatial size by ``stride``.

    Weight shape is [C_in, C_out, k, k] with k = 2*stride and implicit
    padding stride//2 (k = 3, pad = 1 when stride == 1). The backward pass
    w.r.t. the input is the corresponding forward convolution.
    """
    x, w = as_tensor(x), as_tensor(w)
    if stride < 1:
        raise ValueError(f"stride must be positive, got {stride}")
    k = 2 * stride if stride > 1 else 3
    p = stride // 2 if stride > 1 else 1
    cin, cout, kh, kw = w.shape
    if (kh, kw) != (k, k):
        raise ValueError(f"conv_transpose2d stride {stride} expects kernel {k}, got ({kh}, {kw})")
    n, c, h, wdt = x.shape
    if c != cin:
        raise ValueError(f"conv_transpose2d channel mismatch: input {c}, weight {cin}")
    ho, wo = h * stride, wdt * stride
    xmat = x.data.reshape(n, cin, h * wdt).transpose(0, 2, 1)  # N, HW, Cin
    wmat = w.data.reshape(cin, cout * kh * kw)
    dcols = np.matmul(xmat, wmat)  # N, HW, Cout*k*k
    yp_shape = (n, cout, ho + 2 * p, wo + 2 * p)
    yp = _col2im(dcols, yp_shape, kh, kw, stride, h, wdt)
    out_data = yp[:, :, p : p + ho, p : p + wo]
    if bias is not None:
        out_data = out_data + as_tensor(bias).data.reshape(1, cout, 1, 1)
    out_data = np.ascontiguousarray(out_data)

    def backward(g):
        gp = np.pad(g, ((0, 0), (0, 0), (p, p), (p, p))) if p else g
        cols, gh, gw = _im2col(gp, kh, kw, stride)
        if x.requires_grad:
            dx = np.matmul(cols, wmat.T).transpose(0, 2, 1).reshape(n, cin, h, wdt)
            x._accumulate(dx)
        if w.requires_grad:
            dmat = np.einsum("npk,npc->ck", cols, xmat)
            w._accumulate(dmat.reshape(w.shape))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2, 3)))

    parents = (x, w) if bias is None else (x, w, as_tensor(bias))
    return _make(out_data, parents, backward)


# -- upsampling --------------------------------------------------------------


def upsample_nearest2x(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out_data = x.data.repeat(2, axis=-2).repeat(2, axis=-1)

    def backward(g):
        n, c, h2, w2 = g.shape
        gx = g.reshape(n, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5))
        x._accumulate(gx)

    return _make(out_data, (x,), backward)


def _bilinear_axis(n_out: int, n_in: int):
    # half-pixel centers (align_corners=False), clamped to the border
    coord = (np.arange(n_out) + 0.5) / 2.0 - 0.5
    coord = np.clip(coord, 0, n_in - 1)
    lo = np.floor(coord).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = coord - lo
    return lo, hi, frac


def upsample_bilinear2x(x: Tensor) -> Tensor:
    x = as_tensor(x)
    n, c, h, w = x.shape
    ylo, yhi, fy = _bilinear_axis(2 * h, h)
    xlo, xhi, fx = _bilinear_axis(2 * w, w)
    fy = fy.reshape(-1, 1)
    d = x.data
    top = d[:, :, ylo, :] * (1 - fy)[None, None] + d[:, :, yhi, :] * fy[None, None]
    out_data = top[:, :, :, xlo] * (1 - fx) + top[:, :, :, xhi] * fx

    def backward(g):
        gtop = np.zeros((n, c, 2 * h, w), dtype=g.dtype)
        gw = g * (1 - fx)
        gw2 = g * fx
        for j in range(2 * w):
            gtop[:, :, :, xlo[j]] += gw[:, :, :, j]
            gtop[:, :, :, xhi[j]] += gw2[:, :, :, j]
        gx = np.zeros_like(x.data)
        gy = gtop * (1 - fy)[None, None]
        gy2 = gtop * fy[None, None]
        for i in range(2 * h):
            gx[:, :, ylo[i], :] += gy[:, :, i, :]
            gx[:, :, yhi[i], :] += gy2[:, :, i, :]
        x._accumulate(gx)

    return _make(np.ascontiguousarray(out_data), (x,), backward)


# -- parameters & optimizer --------------------------------------------------


class Parameter:
    """Trainable tensor with a checkpoint path name."""

    __slots__ = ("tensor", "name")

    def __init__(self, data, name: str = ""):
        self.tensor = Tensor(np.asarray(data, dtype=_DTYPE), requires_grad=True)
        self.name = name

    @property
    def data(self):
        return self.tensor.data

    @data.setter
    def data(self, value):
        self.tensor.data = np.asarray(value, dtype=self.tensor.data.dtype)

    @property
    def grad(self):
        return self.tensor.grad

    @property
    def shape(self):
        return self.tensor.shape

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


class OptimizerState:
    """Adam moment buffers and hyperparameters, keyed by parameter name."""

    def __init__(self, params: Iterable[Parameter], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {id(p): np.zeros_like(p.data) for p in params}
        self.v = {id(p): np.zeros_like(p.data) for p in params}


def adam_step(params: Sequence[Parameter], state: OptimizerState):
    """One Adam update with bias correction; zeroes grads afterwards."""
    for p in params:
        if p.tensor.grad is None:
            raise ValueError(f"parameter {p.name!r} has no gradient")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for p in params:
        g = p.tensor.grad
        m = state.m[id(p)]
        v = state.v[id(p)]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p.tensor.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p.tensor.zero_grad()


# -- initialization ----------------------------------------------------------


def he_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(_DTYPE)


# -- verification ------------------------------------------------------------


def grad_check(f: Callable[..., Tensor], inputs: Sequence[Tensor], h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    Run under ``double_precision()``; inputs should be small (<= 64 elements
    each is the contract used by the test suite).
    """
    tensors = [x.tensor if isinstance(x, Parameter) else x for x in inputs]
    for t in tensors:
        t.requires_grad = True
        t.zero_grad()
    out = f(*tensors)
    if out.size != 1:
        raise ValueError("grad_check requires a scalar-valued function")
    out.backward()
    max_err = 0.0
    for t in tensors:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f(*tensors).data)
            flat[i] = orig - h
            fm = float(f(*tensors).data)
            flat[i] = orig
            numeric = (fp - fm) / (2 * h)
            a = analytic.reshape(-1)[i]
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            max_err = max(max_err, err)
    return max_err
