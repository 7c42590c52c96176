"""Minimal dense tensor with reverse-mode differentiation.

Every op records its parents and a closure mapping the output gradient to
one gradient per parent. ``backward`` walks the recorded graph once in
reverse topological order, accumulating additively across fan-out.
"""

from __future__ import annotations

import logging
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, DimensionError

logger = logging.getLogger(__name__)

DEFAULT_DTYPE = np.float64

# upper bound on im2col elements materialized at once by conv3d
CONV_CHUNK_ELEMENTS = 8_000_000

# when a list, piecewise ops (relu, abs, max_pool) append the branch they took
_branch_log: list | None = None


class record_branches:
    """Context manager collecting a fingerprint of every piecewise-op branch decision.

    Two evaluations with equal fingerprints ran on the same linear piece, so a
    finite difference between them does not straddle a kink.
    """

    def __enter__(self) -> list:
        global _branch_log
        self._prev = _branch_log
        _branch_log = []
        return _branch_log

    def __exit__(self, *exc) -> None:
        global _branch_log
        _branch_log = self._prev


def _log_branch(decision: np.ndarray) -> None:
    if _branch_log is not None:
        _branch_log.append(decision.tobytes())


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # -- operator sugar ---------------------------------------------------
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

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axes=None, keepdims=False):
        return reduce_sum(self, axes, keepdims)

    def mean(self, axes=None, keepdims=False):
        return reduce_mean(self, axes, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)

    def backward(self) -> None:
        backward(self)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if dtype is None and np.isscalar(x):
        return Tensor(np.asarray(x, dtype=DEFAULT_DTYPE))
    return Tensor(x, dtype=dtype)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
        out.op = op
    return out


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    # python scalars adopt the tensor operand's dtype (no silent upcasts)
    if not isinstance(a, Tensor) and isinstance(b, Tensor) and np.isscalar(a):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    if not isinstance(b, Tensor) and isinstance(a, Tensor) and np.isscalar(b):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    return as_tensor(a), as_tensor(b)


def _broadcast_shape(a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise DimensionError(f"cannot broadcast {a.shape} with {b.shape}") from exc


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b)

    def bw(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b)

    def bw(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b)

    def bw(g):
        return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b)

    def bw(g):
        ga = g / b.data
        return unbroadcast(ga, a.shape), unbroadcast(-ga * a.data / b.data, b.shape)

    return _make(a.data / b.data, (a, b), bw, "div")


def scalar_mul(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data * a.data.dtype.type(c), (a,), lambda g: (g * c,), "scalar_mul")


def abs_(a: Tensor) -> Tensor:
    # subgradient at 0 is 0
    s = np.sign(a.data)
    _log_branch(s.astype(np.int8))
    return _make(np.abs(a.data), (a,), lambda g: (g * s,), "abs")


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _make(y, (a,), lambda g: (g * y,), "exp")


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a: Tensor) -> Tensor:
    y = np.sqrt(a.data)
    return _make(y, (a,), lambda g: (g * 0.5 / y,), "sqrt")


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(a: Tensor) -> Tensor:
    y = _stable_sigmoid(a.data)
    return _make(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    _log_branch(np.packbits(mask))
    return _make(np.where(mask, a.data, 0).astype(a.dtype), (a,), lambda g: (g * mask,), "relu")


_UNARY = {"abs": abs_, "exp": exp, "sigmoid": sigmoid, "relu": relu, "tanh": tanh, "log": log, "sqrt": sqrt}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(kind: str, a, b=None) -> Tensor:
    """Dispatch an elementwise op by name; ``scalar-mul`` takes a float ``b``."""
    if kind in _UNARY:
        if b is not None:
            raise ContractError(f"{kind} is unary")
        return _UNARY[kind](as_tensor(a))
    if kind in _BINARY:
        if b is None:
            raise ContractError(f"{kind} needs two operands")
        return _BINARY[kind](a, b)
    if kind in ("scalar-mul", "scalar_mul"):
        return scalar_mul(as_tensor(a), float(b))
    raise ValueError(f"unknown elementwise op {kind!r}")


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        y = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(str(exc)) from exc
    return _make(y, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def permute(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise DimensionError(f"invalid permutation {axes} for rank {a.ndim}")
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "permute")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        y = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(str(exc)) from exc
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(y, tensors, bw, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        y = np.stack([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(str(exc)) from exc

    def bw(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _make(y, tensors, bw, "stack")


def index(a: Tensor, idx) -> Tensor:
    """Basic/advanced indexing along any axes; gradient scatters back additively."""
    if not isinstance(idx, tuple):
        idx = (idx,)
    y = a.data[idx]
    basic = all(isinstance(i, (slice, int)) for i in idx)

    def bw(g):
        out = np.zeros_like(a.data)
        if basic:
            out[idx] = g
        else:
            np.add.at(out, idx, g)
        return (out,)

    return _make(np.ascontiguousarray(y), (a,), bw, "index")


def take_along(a: Tensor, indices: np.ndarray, axis: int) -> Tensor:
    """``np.take_along_axis`` with a scatter-add backward."""
    indices = np.asarray(indices)
    y = np.take_along_axis(a.data, indices, axis=axis)

    def bw(g):
        out = np.zeros_like(a.data)
        # put_along_axis would drop repeated indices; expand to add.at coordinates
        full = np.broadcast_to(indices, g.shape)
        grids = list(np.indices(g.shape, sparse=True))
        grids[axis] = full
        np.add.at(out, tuple(grids), g)
        return (out,)

    return _make(y, (a,), bw, "take_along")


# ---------------------------------------------------------------------------
# matmul
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy batching rules on leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul needs operands of rank >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"inner extents differ: {a.shape} @ {b.shape}")
    try:
        y = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise DimensionError(str(exc)) from exc

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return _make(y, (a, b), bw, "matmul")


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def _norm_axes(axes, ndim: int) -> tuple[int, ...]:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    axes = tuple(ax % ndim if -ndim <= ax < ndim else _bad_axis(ax, ndim) for ax in axes)
    if not axes:
        raise DimensionError("empty reduction set")
    if len(set(axes)) != len(axes):
        raise DimensionError(f"repeated axis in {axes}")
    return axes


def _bad_axis(ax, ndim):
    raise DimensionError(f"axis {ax} out of range for rank {ndim}")


def reduce_sum(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axes, a.ndim)
    y = a.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.asarray(y), (a,), bw, "sum")


def reduce_mean(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axes, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes]))
    y = a.data.sum(axis=axes, keepdims=keepdims) / count

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return _make(np.asarray(y, dtype=a.dtype), (a,), bw, "mean")


def logsumexp(a: Tensor, axis: int = -1) -> Tensor:
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=axis, keepdims=True)
    y = (np.log(s) + m).squeeze(axis)

    def bw(g):
        return (np.expand_dims(g, axis) * e / s,)

    return _make(y, (a,), bw, "logsumexp")


def max_pool(a: Tensor, window: Sequence[int]) -> Tensor:
    """Non-overlapping max pooling over the trailing ``len(window)`` axes.

    Ties route the gradient to the first index in row-major window order.
    """
    window = tuple(int(w) for w in window)
    k = len(window)
    if k == 0 or k > a.ndim:
        raise DimensionError("empty or oversized pooling window")
    lead = a.shape[: a.ndim - k]
    spatial = a.shape[a.ndim - k :]
    for n, w in zip(spatial, window):
        if w < 1 or n % w != 0:
            raise DimensionError(f"extent {n} not divisible by pooling window {w}")
    if all(w == 1 for w in window):
        return a
    out_sp = tuple(n // w for n, w in zip(spatial, window))
    split = lead + tuple(v for pair in zip(out_sp, window) for v in pair)
    nl = len(lead)
    order = tuple(range(nl)) + tuple(nl + 2 * i for i in range(k)) + tuple(nl + 2 * i + 1 for i in range(k))
    blocks = a.data.reshape(split).transpose(order).reshape(lead + out_sp + (-1,))
    arg = blocks.argmax(axis=-1)
    _log_branch(arg.astype(np.int16))
    y = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    inv = tuple(np.argsort(order))

    def bw(g):
        gb = np.zeros(blocks.shape, dtype=g.dtype)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gb = gb.reshape(lead + out_sp + window).transpose(inv).reshape(a.shape)
        return (gb,)

    return _make(y, (a,), bw, "max_pool")


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


def _triple(v) -> tuple[int, int, int]:
    if isinstance(v, int):
        return (v, v, v)
    v = tuple(int(x) for x in v)
    if len(v) != 3:
        raise DimensionError(f"expected 3 values, got {v}")
    return v


def conv_output_shape(in_shape, kernel, stride=1, padding=0) -> tuple[int, int, int]:
    """Per-axis output extent floor((n + 2p - k) / s) + 1."""
    kernel, stride, padding = _triple(kernel), _triple(stride), _triple(padding)
    return tuple((n + 2 * p - k) // s + 1 for n, k, s, p in zip(in_shape, kernel, stride, padding))


def conv3d(x: Tensor, w: Tensor, b: Tensor | None = None, stride=1, padding=0) -> Tensor:
    """3D cross-correlation (no kernel flip).

    ``x`` is (C_in, T, H, W) or batched (N, C_in, T, H, W); ``w`` is
    (C_out, C_in, kt, kh, kw); ``b`` is (C_out,) or None.
    """
    x, w = as_tensor(x), as_tensor(w)
    single = x.ndim == 4
    if x.ndim not in (4, 5) or w.ndim != 5:
        raise DimensionError(f"conv3d expects 4/5-D input and 5-D kernel, got {x.shape}, {w.shape}")
    xd = x.data[None] if single else x.data
    n, cin = xd.shape[:2]
    cout, wcin, kt, kh, kw = w.shape
    if wcin != cin:
        raise DimensionError(f"kernel expects {wcin} input channels, input has {cin}")
    stride, padding = _triple(stride), _triple(padding)
    if any(p < 0 for p in padding) or any(s < 1 for s in stride):
        raise DimensionError("invalid stride/padding")
    out_sp = conv_output_shape(xd.shape[2:], (kt, kh, kw), stride, padding)
    if any(o < 1 for o in out_sp):
        raise DimensionError(f"non-positive output extent {out_sp} for input {xd.shape[2:]}")
    pt, ph, pw = padding
    st, sh, sw = stride
    To, Ho, Wo = out_sp
    # channels-last padded copy: every kernel offset then copies contiguous C-runs
    xp = np.zeros((n, xd.shape[2] + 2 * pt, xd.shape[3] + 2 * ph, xd.shape[4] + 2 * pw, cin), dtype=xd.dtype)
    xp[:, pt : pt + xd.shape[2], ph : ph + xd.shape[3], pw : pw + xd.shape[4]] = xd.transpose(0, 2, 3, 4, 1)
    offsets = [(i, j, k) for i in range(kt) for j in range(kh) for k in range(kw)]
    ksize = cin * len(offsets)
    positions = To * Ho * Wo
    # im2col is built per chunk of samples and rebuilt in backward, bounding memory
    chunk = max(1, int(CONV_CHUNK_ELEMENTS // max(positions * ksize, 1)))

    def window(i, j, k):
        return (slice(i, i + st * To, st), slice(j, j + sh * Ho, sh), slice(k, k + sw * Wo, sw))

    def im2col(lo: int, hi: int) -> np.ndarray:
        # (n, T', H', W', C, kt, kh, kw) view, strided, then one copy into column order
        view = sliding_window_view(xp[lo:hi], (kt, kh, kw), axis=(1, 2, 3))
        view = view[:, : st * To : st, : sh * Ho : sh, : sw * Wo : sw]
        return view.transpose(0, 1, 2, 3, 5, 6, 7, 4).reshape(-1, ksize)

    # (O, C, kt, kh, kw) -> (O, kt*kh*kw*C) matching the column layout
    wmat = w.data.transpose(0, 2, 3, 4, 1).reshape(cout, -1)
    if b is not None:
        b = as_tensor(b)
        if b.shape != (cout,):
            raise DimensionError(f"bias shape {b.shape} != ({cout},)")
    y = np.empty((n, cout) + out_sp, dtype=np.result_type(xd, w.data))
    for lo in range(0, n, chunk):
        hi = min(n, lo + chunk)
        yc = im2col(lo, hi) @ wmat.T
        if b is not None:
            yc += b.data
        y[lo:hi] = yc.reshape((hi - lo,) + out_sp + (cout,)).transpose(0, 4, 1, 2, 3)
    if single:
        y = y[0]
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        g5 = g[None] if single else g
        gw = np.zeros(wmat.shape, dtype=g.dtype)
        gb = np.zeros(cout, dtype=g.dtype)
        gxp = np.zeros(xp.shape, dtype=g.dtype) if x.requires_grad else None
        for lo in range(0, n, chunk):
            hi = min(n, lo + chunk)
            g2 = np.ascontiguousarray(g5[lo:hi].transpose(0, 2, 3, 4, 1)).reshape(-1, cout)
            gw += g2.T @ im2col(lo, hi)
            gb += g2.sum(axis=0)
            if gxp is None:
                continue
            gcols = (g2 @ wmat).reshape((hi - lo, To, Ho, Wo, len(offsets), cin))
            for o, (i, j, k) in enumerate(offsets):
                gxp[(slice(lo, hi),) + window(i, j, k)] += gcols[:, :, :, :, o]
        grads = [np.zeros(0), gw.reshape(cout, kt, kh, kw, cin).transpose(0, 4, 1, 2, 3)]
        if gxp is not None:
            gx = gxp[:, pt : pt + xd.shape[2], ph : ph + xd.shape[3], pw : pw + xd.shape[4]]
            gx = np.ascontiguousarray(gx.transpose(0, 4, 1, 2, 3))
            grads[0] = gx[0] if single else gx
        if b is not None:
            grads.append(gb)
        return tuple(grads)

    return _make(y, parents, bw, "conv3d")


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------


def _topo_order(root: Tensor) -> list[Tensor]:
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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every leaf requiring grad."""
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar root, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def parameters_of(items: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in items if t.requires_grad]
