"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Operations run eagerly. When a :class:`Tape` is active and at least one operand
requires a gradient, the op is appended to the tape together with its
vector-Jacobian product. ``Tape.backward`` then walks the record in reverse.

    with Tape() as tape:
        x = tape.watch(np.array([1.0, 2.0]))
        y = ad.sum(ad.exp(x) * 3.0)
    grads = tape.backward(y)
    grads[x]

Conventions: min/max/clamp/abs use subgradient 0 at ties; division and
normalisation denominators are bounded below by ``EPS``.
"""
from __future__ import annotations

import threading

import numpy as np
import scipy.sparse as sp

from .errors import EmptyMask, NonFiniteInput, SeedShapeMismatch, ShapeMismatch

EPS = 1e-12

_state = threading.local()


def _tape_stack():
    stack = getattr(_state, "stack", None)
    if stack is None:
        stack = _state.stack = []
    return stack


def current_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """Immutable dense float64 array, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad=False, check=True):
        arr = np.asarray(data, dtype=np.float64).view()
        if check and not np.isfinite(arr).all():
            raise NonFiniteInput("tensor data contains NaN or Inf")
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return pow(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def constant(x):
    """Wrap ``x`` as a tensor that never receives gradients."""
    return Tensor(x)


class Gradients(dict):
    """Mapping from watched leaf tensors to their gradient arrays."""

    def __getitem__(self, key):
        return dict.__getitem__(self, id(key))

    def __contains__(self, key):
        return dict.__contains__(self, id(key))

    def get(self, key, default=None):
        return dict.get(self, id(key), default)


class Tape:
    """Ordered record of differentiable operations."""

    def __init__(self):
        self.nodes = []
        self.leaves = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        stack.remove(self)
        return False

    def watch(self, data):
        """Create a leaf tensor whose gradient ``backward`` will report."""
        leaf = Tensor(data.data if isinstance(data, Tensor) else data, requires_grad=True)
        self.leaves.append(leaf)
        return leaf

    def record(self, out, inputs, vjp):
        self.nodes.append((out, inputs, vjp))

    def backward(self, output, seed=None):
        output = as_tensor(output)
        if seed is None:
            seed = np.ones(output.shape)
        seed = np.asarray(seed, dtype=np.float64)
        if seed.shape != output.shape:
            raise SeedShapeMismatch(f"seed shape {seed.shape} != output shape {output.shape}")
        grads = {id(output): seed}
        for out, inputs, vjp in reversed(self.nodes):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            in_grads = vjp(g)
            for inp, gi in zip(inputs, in_grads):
                if gi is None or not inp.requires_grad:
                    continue
                gi = _unbroadcast(gi, inp.shape)
                key = id(inp)
                prev = grads.get(key)
                grads[key] = gi if prev is None else prev + gi
        result = Gradients()
        for leaf in self.leaves:
            g = grads.get(id(leaf))
            dict.__setitem__(result, id(leaf), np.zeros(leaf.shape) if g is None else g)
        return result


def backward(tape, output, seed=None):
    return tape.backward(output, seed)


def grad(fn, *arrays):
    """Evaluate ``fn`` on watched copies of ``arrays``; return (value, grads)."""
    with Tape() as tape:
        leaves = [tape.watch(a) for a in arrays]
        out = fn(*leaves)
    g = tape.backward(out)
    return out.data, [g[leaf] for leaf in leaves]


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(*shapes):
    try:
        return np.broadcast_shapes(*shapes)
    except ValueError as exc:
        raise ShapeMismatch(f"shapes {shapes} are not broadcast-compatible") from exc


def _make(data, inputs, vjp, check=False):
    needs = any(t.requires_grad for t in inputs)
    tape = current_tape() if needs else None
    out = Tensor(data, requires_grad=tape is not None, check=check)
    if tape is not None:
        tape.record(out, inputs, vjp)
    return out


# ---------------------------------------------------------------- arithmetic

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    return _make(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    return _make(a.data - b.data, (a, b), lambda g: (g, -g))


def neg(a):
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    ad_, bd = a.data, b.data
    return _make(ad_ * bd, (a, b), lambda g: (g * bd if a.requires_grad else None,
                                              g * ad_ if b.requires_grad else None))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    bd = b.data
    safe = np.where(np.abs(bd) < EPS, np.where(bd < 0, -EPS, EPS), bd)
    out = a.data / safe

    def vjp(g):
        ga = g / safe if a.requires_grad else None
        gb = -g * out / safe if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), vjp)


def pow(x, p):
    """``x ** p``.

    Integer constant exponents follow ordinary algebra. For fractional or
    tensor exponents the base is treated as clamped at zero: non-positive
    bases give value 0 and zero gradient.
    """
    x = as_tensor(x)
    if not isinstance(p, Tensor) and float(p) == int(p):
        n = int(p)
        xd = x.data
        out = xd ** float(n)
        if n == 0:
            return _make(np.ones_like(xd), (x,), lambda g: (np.zeros_like(g),))
        deriv = n * xd ** float(n - 1)
        return _make(out, (x,), lambda g: (g * deriv,), check=n < 0)
    p = as_tensor(p)
    xd, pd = x.data, p.data
    _broadcast_shape(x.shape, p.shape)
    pos = xd > 0
    xs = np.where(pos, xd, 1.0)
    out = np.where(pos, xs ** pd, 0.0)

    def vjp(g):
        gx = gp = None
        if x.requires_grad:
            gx = g * np.where(pos, pd * xs ** (pd - 1.0), 0.0)
        if p.requires_grad:
            gp = g * np.where(pos, out * np.log(xs), 0.0)
        return gx, gp

    return _make(out, (x, p), vjp, check=True)


def exp(x):
    x = as_tensor(x)
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,), check=True)


def log(x):
    x = as_tensor(x)
    xd = x.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(xd)
    return _make(out, (x,), lambda g: (g / xd,), check=True)


def sqrt(x):
    x = as_tensor(x)
    out = np.sqrt(np.maximum(x.data, 0.0))
    return _make(out, (x,), lambda g: (np.where(x.data > 0, g * 0.5 / np.maximum(out, EPS), 0.0),))


def sin(x):
    x = as_tensor(x)
    return _make(np.sin(x.data), (x,), lambda g: (g * np.cos(x.data),))


def cos(x):
    x = as_tensor(x)
    return _make(np.cos(x.data), (x,), lambda g: (-g * np.sin(x.data),))


def abs(x):
    x = as_tensor(x)
    return _make(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def minimum(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    ad_, bd = a.data, b.data
    return _make(np.minimum(ad_, bd), (a, b),
                 lambda g: (g * (ad_ < bd), g * (bd < ad_)))


def maximum(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    ad_, bd = a.data, b.data
    return _make(np.maximum(ad_, bd), (a, b),
                 lambda g: (g * (ad_ > bd), g * (bd > ad_)))


def clamp(x, lo, hi):
    """Clamp to constant bounds; zero gradient outside and at the bounds."""
    x = as_tensor(x)
    xd = x.data
    inside = (xd > lo) & (xd < hi)
    return _make(np.clip(xd, lo, hi), (x,), lambda g: (g * inside,))


def lerp(a, b, t):
    """``a + t * (b - a)``."""
    a, b, t = as_tensor(a), as_tensor(b), as_tensor(t)
    _broadcast_shape(a.shape, b.shape, t.shape)
    ad_, bd, td = a.data, b.data, t.data
    return _make(ad_ + td * (bd - ad_), (a, b, t),
                 lambda g: (g * (1.0 - td), g * td, g * (bd - ad_)))


def where(cond, a, b):
    """Select with a constant boolean condition."""
    a, b = as_tensor(a), as_tensor(b)
    cond = np.asarray(cond, dtype=bool)
    return _make(np.where(cond, a.data, b.data), (a, b),
                 lambda g: (np.where(cond, g, 0.0), np.where(cond, 0.0, g)))


# ---------------------------------------------------------------- reductions, shapes

def sum(x, axis=None, keepdims=False):
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)
    shape = x.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _make(out, (x,), vjp)


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    n = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return sum(x, axis, keepdims) * (1.0 / n)


def reshape(x, shape):
    x = as_tensor(x)
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x, axes=None):
    x = as_tensor(x)
    inv = None if axes is None else np.argsort(axes)
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def getitem(x, index):
    x = as_tensor(x)
    shape = x.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return (out,)

    return _make(x.data[index], (x,), vjp)


def take(x, indices, axis=0):
    """Gather along ``axis`` with constant integer indices."""
    x = as_tensor(x)
    indices = np.asarray(indices)
    shape = x.shape

    k = max(indices.ndim, 1)

    def vjp(g):
        out = np.zeros(shape)
        moved = np.moveaxis(out, axis, 0)
        gm = g if indices.ndim == 0 else np.moveaxis(g, list(range(axis, axis + k)), list(range(k)))
        np.add.at(moved, indices, gm)
        return (out,)

    return _make(np.take(x.data, indices, axis=axis), (x,), vjp)


def roll(x, shift, axis):
    x = as_tensor(x)
    return _make(np.roll(x.data, shift, axis), (x,), lambda g: (np.roll(g, -shift, axis),))


def stack(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _make(out, tuple(tensors), vjp)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum(sizes)[:-1]
    return _make(out, tuple(tensors), lambda g: tuple(np.split(g, splits, axis=axis)))


def broadcast_to(x, shape):
    x = as_tensor(x)
    return _make(np.broadcast_to(x.data, shape), (x,), lambda g: (g,))


def scatter_rows(x, index, n_rows):
    """Place rows of ``x`` at ``index`` in a zero array with ``n_rows`` rows."""
    x = as_tensor(x)
    out = np.zeros((n_rows,) + x.shape[1:])
    out[index] = x.data
    return _make(out, (x,), lambda g: (g[index],))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ad_, bd = a.data, b.data
    try:
        out = np.matmul(ad_, bd)
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from exc

    def vjp(g):
        ga = gb = None
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(bd, -1, -2)) if bd.ndim > 1 else np.multiply.outer(g, bd)
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(ad_, -1, -2), g) if ad_.ndim > 1 else np.multiply.outer(ad_, g)
        return ga, gb

    return _make(out, (a, b), vjp)


# ---------------------------------------------------------------- vector helpers

def dot3(a, b):
    """Dot product over a trailing axis of length 3, keeping that axis (size 1)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != 3 or b.shape[-1] != 3:
        raise ShapeMismatch("dot3 expects a trailing axis of length 3")
    _broadcast_shape(a.shape, b.shape)
    ad_, bd = a.data, b.data
    out = (ad_ * bd).sum(axis=-1, keepdims=True)
    return _make(out, (a, b), lambda g: (g * bd, g * ad_))


def normalize3(x):
    x = as_tensor(x)
    if x.shape[-1] != 3:
        raise ShapeMismatch("normalize3 expects a trailing axis of length 3")
    xd = x.data
    r = np.maximum(np.sqrt((xd * xd).sum(axis=-1, keepdims=True)), EPS)
    y = xd / r

    def vjp(g):
        return ((g - y * (g * y).sum(axis=-1, keepdims=True)) / r,)

    return _make(y, (x,), vjp)


def _mask_weights(mask, n):
    w = np.asarray(mask, dtype=np.float64).reshape(-1)
    if len(w) != n:
        raise ShapeMismatch(f"mask length {len(w)} != {n} rows")
    total = w.sum()
    if total <= 0:
        raise EmptyMask("mask has no weight")
    return w, total


def reduce_mean_masked(x, mask):
    """Weighted mean over the leading axis; ``mask`` holds constant weights."""
    x = as_tensor(x)
    w, total = _mask_weights(mask, x.shape[0])
    wb = w.reshape((-1,) + (1,) * (x.ndim - 1))
    out = (wb * x.data).sum(axis=0) / total
    return _make(out, (x,), lambda g: (np.broadcast_to(g, x.shape) * wb / total,))


def reduce_var_masked(x, mask):
    """Weighted (population) variance over the leading axis."""
    x = as_tensor(x)
    w, total = _mask_weights(mask, x.shape[0])
    wb = w.reshape((-1,) + (1,) * (x.ndim - 1))
    mu = (wb * x.data).sum(axis=0) / total
    dev = x.data - mu
    out = (wb * dev * dev).sum(axis=0) / total
    return _make(out, (x,), lambda g: (2.0 * g * wb * dev / total,))


# ---------------------------------------------------------------- image ops

def bilinear_weights(uv, height, width):
    """Sparse (P, height*width) interpolation matrix with wrap addressing.

    ``uv[:, 0]`` runs along columns, ``uv[:, 1]`` along rows; texel centres
    sit at ``(i + 0.5) / n`` and coordinates are taken modulo 1.
    """
    uv = np.asarray(uv, dtype=np.float64)
    u = np.mod(uv[:, 0], 1.0) * width - 0.5
    v = np.mod(uv[:, 1], 1.0) * height - 0.5
    x0 = np.floor(u)
    y0 = np.floor(v)
    fx = u - x0
    fy = v - y0
    x0 = x0.astype(np.int64) % width
    y0 = y0.astype(np.int64) % height
    x1 = (x0 + 1) % width
    y1 = (y0 + 1) % height
    n = len(uv)
    rows = np.repeat(np.arange(n), 4)
    cols = np.stack([y0 * width + x0, y0 * width + x1, y1 * width + x0, y1 * width + x1], axis=1).ravel()
    vals = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=1).ravel()
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, height * width))


def bilinear_sample(texture, uv=None, weights=None):
    """Sample an (H, W, C) texture at (P, 2) coordinates -> (P, C).

    Differentiable with respect to the texture only. A precomputed matrix from
    :func:`bilinear_weights` may be passed as ``weights``.
    """
    texture = as_tensor(texture)
    h, w, c = texture.shape
    S = weights if weights is not None else bilinear_weights(uv, h, w)
    flat = texture.data.reshape(h * w, c)
    out = S @ flat
    return _make(out, (texture,), lambda g: ((S.T @ g).reshape(h, w, c),))


def conv2d_fixed(x, kernels):
    """'Same' zero-padded correlation of (H, W, Cin) with fixed (K, K, Cin, Cout) kernels."""
    x = as_tensor(x)
    kernels = np.asarray(kernels, dtype=np.float64)
    k = kernels.shape[0]
    if kernels.shape[2] != x.shape[2]:
        raise ShapeMismatch("kernel input channels do not match image channels")
    r = k // 2
    h, w, _ = x.shape
    xp = np.pad(x.data, ((r, r), (r, r), (0, 0)))
    out = np.zeros((h, w, kernels.shape[3]))
    for dy in range(k):
        for dx in range(k):
            out += xp[dy:dy + h, dx:dx + w] @ kernels[dy, dx]

    def vjp(g):
        gp = np.zeros_like(xp)
        for dy in range(k):
            for dx in range(k):
                gp[dy:dy + h, dx:dx + w] += g @ kernels[dy, dx].T
        return (gp[r:r + h, r:r + w],)

    return _make(out, (x,), vjp)


def _interp_matrix(n_out, n_in):
    pos = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    i0 = np.floor(pos).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    f = pos - i0
    m = np.zeros((n_out, n_in))
    m[np.arange(n_out), i0] += 1 - f
    m[np.arange(n_out), i1] += f
    return m


def upsample_bilinear(x, size):
    """Resize (h, w, C) to ``size`` = (H, W) with half-pixel aligned bilinear weights."""
    x = as_tensor(x)
    H, W = size
    uy = _interp_matrix(H, x.shape[0])
    ux = _interp_matrix(W, x.shape[1])
    out = np.einsum("Hh,hwc,Ww->HWc", uy, x.data, ux, optimize=True)
    return _make(out, (x,), lambda g: (np.einsum("Hh,HWc,Ww->hwc", uy, g, ux, optimize=True),))


def avg_pool(x, k):
    """Non-overlapping k x k mean pooling of (H, W, C); H and W divisible by k."""
    x = as_tensor(x)
    h, w, c = x.shape
    if h % k or w % k:
        raise ShapeMismatch(f"image {h}x{w} not divisible by pool size {k}")
    out = x.data.reshape(h // k, k, w // k, k, c).mean(axis=(1, 3))

    def vjp(g):
        return (np.repeat(np.repeat(g, k, axis=0), k, axis=1) / (k * k),)

    return _make(out, (x,), vjp)
