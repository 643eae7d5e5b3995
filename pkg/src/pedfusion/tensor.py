"""Numpy-backed tensors with tape-based reverse-mode differentiation.

Every primitive returns a new :class:`Tensor` whose ``_backward`` closure maps
the output gradient to one gradient per parent.  :func:`backward` builds the
tape (a topological ordering of the graph reachable from the loss) and walks
it in reverse.  Only leaves accumulate into ``.grad``; intermediate gradients
live in a scratch dict for the duration of one traversal.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class DimensionError(ValueError):
    pass


class ContractError(ValueError):
    pass


class ParameterError(ValueError):
    pass


_FLOATS = (np.float32, np.float64)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.type not in _FLOATS:
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents: tuple = ()
        self._backward = None
        self.op = "leaf"
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f", op={self.op}" if self.op != "leaf" else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{tag})"

    def __add__(self, other):
        return add(self, _lift(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_lift(other, self)))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)

    def backward(self):
        backward(self)


def _lift(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _node(data, parents, backward_fn, op) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    out.op = op
    return out


def tape(loss: Tensor) -> list[Tensor]:
    """Topologically ordered nodes reachable from ``loss`` (inputs first)."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params: Sequence[Tensor] | None = None) -> None:
    """Populate ``.grad`` of every requires_grad leaf reachable from ``loss``.

    Gradients accumulate across calls until :meth:`Tensor.zero_grad`.  Leaves
    listed in ``params`` that the loss does not reach receive a zero gradient.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node._parents:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    if params is not None:
        for p in params:
            if p.requires_grad and p.grad is None:
                p.grad = np.zeros_like(p.data)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} do not broadcast") from exc
    sa, sb = a.shape, b.shape
    return _node(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def bias_add(x: Tensor, b: Tensor) -> Tensor:
    """Add a bias vector along the last axis of ``x``."""
    if b.ndim != 1 or b.shape[0] != x.shape[-1]:
        raise DimensionError(f"bias_add: bias {b.shape} does not match last axis of {x.shape}")
    return add(x, b)


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} do not broadcast") from exc
    ad, bd = a.data, b.data

    def bw(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _node(out, (a, b), bw, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c = a.dtype.type(c)
    return _node(a.data * c, (a,), lambda g: (g * c,), "scale")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0).astype(a.dtype), (a,), lambda g: (g * mask,), "relu")


def log(a: Tensor) -> Tensor:
    x = a.data
    return _node(np.log(x), (a,), lambda g: (g / x,), "log")


def clamp_min(a: Tensor, lo: float) -> Tensor:
    mask = a.data >= lo
    out = np.where(mask, a.data, a.dtype.type(lo)).astype(a.dtype)
    return _node(out, (a,), lambda g: (g * mask,), "clamp_min")


# shape


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),), "reshape")


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {a.shape}")
    return _node(a.data.T, (a,), lambda g: (g.T,), "transpose")


def stack_concat(parts: Sequence[Tensor]) -> Tensor:
    """Stack M vectors of width d into an M x d matrix (row i = parts[i])."""
    if not parts:
        raise DimensionError("stack_concat needs at least one part")
    widths = {p.shape for p in parts}
    if len(widths) != 1 or parts[0].ndim != 1:
        raise DimensionError(f"stack_concat: parts must be vectors of one width, got {sorted(widths)}")
    out = np.stack([p.data for p in parts])
    return _node(out, tuple(parts), lambda g: tuple(g[i] for i in range(len(parts))), "stack_concat")


# reductions


def sum_(a: Tensor, axis=None) -> Tensor:
    src = a.shape
    out = a.data.sum(axis=axis)

    def bw(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return _node(np.asarray(out, dtype=a.dtype), (a,), bw, "sum")


def mean(a: Tensor, axis=None) -> Tensor:
    src = a.shape
    axes = tuple(range(a.ndim)) if axis is None else (axis if isinstance(axis, tuple) else (axis,))
    count = int(np.prod([src[ax] for ax in axes]))
    inv = a.dtype.type(1.0 / count)
    out = a.data.mean(axis=axis)

    def bw(g):
        g = np.expand_dims(g, axes) if axis is not None else g
        return (np.broadcast_to(g * inv, src).copy(),)

    return _node(np.asarray(out, dtype=a.dtype), (a,), bw, "mean")


def global_average_pool(x: Tensor) -> Tensor:
    """Row means of a d x K matrix."""
    if x.ndim != 2 or x.shape[1] < 1:
        raise DimensionError(f"global_average_pool expects d x K with K >= 1, got {x.shape}")
    return mean(x, axis=1)


# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data
    return _node(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")


def softmax(x: Tensor, axis=-1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _node(s, (x,), bw, "softmax")


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; the identity (same object) outside training or at p=0."""
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ParameterError("dropout in training mode needs an rng")
    keep = rng.random(x.shape) >= p
    mask = keep.astype(x.dtype) * x.dtype.type(1.0 / (1.0 - p))
    return _node(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


# 3-D convolution and pooling


def _triple(v):
    if np.isscalar(v):
        return (int(v),) * 3
    t = tuple(int(u) for u in v)
    if len(t) != 3:
        raise ParameterError(f"expected an int or a 3-tuple, got {v!r}")
    return t


def conv3d(x: Tensor, w: Tensor, b: Tensor | None = None, stride=1, padding=0) -> Tensor:
    """Cross-correlate a C x D x H x W clip with O x C x kD x kH x kW kernels."""
    s = _triple(stride)
    p = _triple(padding)
    if min(s) < 1 or min(p) < 0:
        raise ParameterError(f"conv3d: stride must be >= 1 and padding >= 0, got {s}, {p}")
    if x.ndim != 4 or w.ndim != 5:
        raise DimensionError(f"conv3d: expected 4-D input and 5-D kernels, got {x.shape} and {w.shape}")
    C, D, H, W = x.shape
    O, Ci, kd, kh, kw = w.shape
    if Ci != C:
        raise DimensionError(f"conv3d: input has {C} channels, kernels {w.shape} expect {Ci}")
    padded = (D + 2 * p[0], H + 2 * p[1], W + 2 * p[2])
    if kd > padded[0] or kh > padded[1] or kw > padded[2]:
        raise DimensionError(f"conv3d: kernel {(kd, kh, kw)} larger than padded input {padded}")
    out_dims = tuple((n - k) // st + 1 for n, k, st in zip(padded, (kd, kh, kw), s))
    xp = np.pad(x.data, ((0, 0), (p[0], p[0]), (p[1], p[1]), (p[2], p[2]))) if any(p) else x.data
    win = sliding_window_view(xp, (kd, kh, kw), axis=(1, 2, 3))[:, :: s[0], :: s[1], :: s[2]]
    # (C, kd, kh, kw, D', H', W') -> (C*kd*kh*kw, V)
    cols = np.ascontiguousarray(win.transpose(0, 4, 5, 6, 1, 2, 3)).reshape(C * kd * kh * kw, -1)
    wmat = w.data.reshape(O, -1)
    out = (wmat @ cols).reshape((O,) + out_dims)
    if b is not None:
        if b.shape != (O,):
            raise DimensionError(f"conv3d: bias {b.shape} does not match {O} output channels")
        out = out + b.data[:, None, None, None]
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        gm = g.reshape(O, -1)
        gw = (gm @ cols.T).reshape(w.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (wmat.T @ gm).reshape((C, kd, kh, kw) + out_dims)
            dxp = np.zeros(xp.shape, dtype=xp.dtype)
            Do, Ho, Wo = out_dims
            for i in range(kd):
                for j in range(kh):
                    for k in range(kw):
                        dxp[:, i : i + s[0] * Do : s[0], j : j + s[1] * Ho : s[1], k : k + s[2] * Wo : s[2]] += dcols[:, i, j, k]
            gx = dxp[:, p[0] : p[0] + D, p[1] : p[1] + H, p[2] : p[2] + W]
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(1, 2, 3))

    return _node(out.astype(x.dtype, copy=False), parents, bw, "conv3d")


def max_pool3d(x: Tensor, kernel) -> Tensor:
    """Non-overlapping max pooling; trailing elements that do not fill a window are dropped."""
    kd, kh, kw = _triple(kernel)
    C, D, H, W = x.shape
    Do, Ho, Wo = D // kd, H // kh, W // kw
    if min(Do, Ho, Wo) < 1:
        raise DimensionError(f"max_pool3d: kernel {(kd, kh, kw)} larger than input {x.shape[1:]}")
    crop = x.data[:, : Do * kd, : Ho * kh, : Wo * kw]
    blocks = crop.reshape(C, Do, kd, Ho, kh, Wo, kw).transpose(0, 1, 3, 5, 2, 4, 6).reshape(C, Do, Ho, Wo, -1)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def bw(g):
        gb = np.zeros(blocks.shape, dtype=g.dtype)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gb = gb.reshape(C, Do, Ho, Wo, kd, kh, kw).transpose(0, 1, 4, 2, 5, 3, 6).reshape(C, Do * kd, Ho * kh, Wo * kw)
        gx = np.zeros(x.shape, dtype=g.dtype)
        gx[:, : Do * kd, : Ho * kh, : Wo * kw] = gb
        return (gx,)

    return _node(out, (x,), bw, "max_pool3d")


# finite-difference checking


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """Elementwise |a - n| / max(|a|, |n|, floor)."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def numerical_grad(f: Callable[[], float], arr: np.ndarray, h: float = 1e-6, index=None) -> np.ndarray:
    """Central differences of ``f`` w.r.t. ``arr`` (mutated in place and restored).

    With ``index`` (a sequence of flat indices) only those entries are probed;
    the result then has one value per index.
    """
    flat = arr.reshape(-1)
    idx = range(flat.size) if index is None else index
    out = np.empty(len(idx), dtype=np.float64)
    for n, i in enumerate(idx):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        out[n] = (fp - fm) / (2 * h)
    return out.reshape(arr.shape) if index is None else out


def gradcheck(
    fn: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    h: float = 1e-6,
    seed: int = 0,
    floor: float = 1e-6,
) -> tuple[float, tuple[int, int]]:
    """Max elementwise relative error between reverse mode and central differences.

    ``fn`` maps Tensors built from ``inputs`` (64-bit) to any Tensor; it is
    reduced to a scalar with a fixed random projection.  Returns the worst
    error and its (input number, flat index).
    """
    arrays = [np.array(a, dtype=np.float64) for a in inputs]
    probe = None

    def scalar(ts):
        nonlocal probe
        out = fn(*ts)
        if probe is None:
            probe = np.random.default_rng(seed).uniform(-1.0, 1.0, size=out.shape)
        return sum_(mul(out, Tensor(probe)))

    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    backward(scalar(leaves), params=leaves)
    worst, where = 0.0, (0, 0)
    for n, (leaf, arr) in enumerate(zip(leaves, arrays)):
        num = numerical_grad(lambda: float(scalar([Tensor(a) for a in arrays]).data), arr, h)
        err = relative_error(leaf.grad, num, floor)
        if err.size and err.max() > worst:
            worst, where = float(err.max()), (n, int(err.argmax()))
    return worst, where
