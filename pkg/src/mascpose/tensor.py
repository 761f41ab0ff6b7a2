"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation the pose model needs is implemented here as a primitive with
a recorded backward rule. Tensors wrap a C-contiguous ``numpy`` float64 array
(flat row-major storage plus a shape); the graph is kept implicitly through
parent links and backward closures, and node creation order doubles as a
topological order, so a backward pass is a single reverse sweep that visits
each node exactly once.

Multiply-accumulate counting: the matmul-like kernels (``matmul``,
``edge_aggregate``, ``window_aggregate``) report their MAC cost to an
optional active counter (see :func:`count_macs`). Elementwise ops,
reductions, softmax and batch norm report zero, which is the convention the
analytic profiler follows as well.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager

import numpy as np

from .errors import AxisError, ContractError, NumericError, ParameterError, ShapeError

__all__ = [
    "Tensor",
    "tensor",
    "zeros",
    "ones",
    "matmul",
    "linear",
    "relu",
    "softmax",
    "mean",
    "tsum",
    "sqrt",
    "clamp_min",
    "reshape",
    "transpose",
    "concat",
    "batch_norm",
    "BatchNormState",
    "cosine_similarity_matrix",
    "topk_mask",
    "edge_aggregate",
    "window_aggregate",
    "backward",
    "count_macs",
    "MacCounter",
    "set_debug_check_finite",
]

_ids = itertools.count()

# When True, every op asserts its output is finite (debug aid, off by default).
_debug_check_finite = False


def set_debug_check_finite(enabled: bool) -> None:
    global _debug_check_finite
    _debug_check_finite = bool(enabled)


class MacCounter:
    """Accumulates multiply-accumulate counts while active."""

    def __init__(self):
        self.total = 0

    def add(self, n: int) -> None:
        self.total += int(n)


_active_counter: MacCounter | None = None


@contextmanager
def count_macs():
    """Context manager that counts MACs executed by matmul-like kernels."""
    global _active_counter
    prev = _active_counter
    counter = MacCounter()
    _active_counter = counter
    try:
        yield counter
    finally:
        _active_counter = prev


def _count(n: int) -> None:
    if _active_counter is not None:
        _active_counter.add(n)


class Tensor:
    """A dense float64 array participating in a reverse-mode autodiff graph."""

    __slots__ = ("data", "requires_grad", "grad", "_id", "_inputs", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        # note: ascontiguousarray would promote 0-d arrays to 1-d
        arr = np.asarray(data, dtype=np.float64, order="C")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._id = next(_ids)
        self._inputs: tuple[Tensor, ...] = ()
        self._backward_fn = None

    # -- construction -----------------------------------------------------

    @staticmethod
    def _from_op(data: np.ndarray, inputs: tuple["Tensor", ...], backward_fn):
        out = Tensor(data)
        if any(t.requires_grad for t in inputs):
            out.requires_grad = True
            out._inputs = inputs
            out._backward_fn = backward_fn
        if _debug_check_finite and not np.all(np.isfinite(out.data)):
            raise NumericError("operation produced non-finite values")
        return out

    # -- basic introspection ----------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ContractError(f"item() requires a scalar tensor, got shape {self.shape}")

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def assert_finite(self) -> "Tensor":
        if not np.all(np.isfinite(self.data)):
            raise NumericError("tensor contains NaN or Inf")
        return self

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    # -- autodiff ----------------------------------------------------------

    def backward(self) -> None:
        """Populate ``grad`` on every reachable leaf with d(self)/d(leaf).

        ``self`` must be scalar. Repeated calls accumulate into leaf grads.
        """
        if self.data.size != 1:
            raise ContractError(f"backward() requires a scalar loss, got shape {self.shape}")
        # Collect the reachable subgraph; creation ids give a topological order.
        nodes: dict[int, Tensor] = {}
        stack = [self]
        while stack:
            node = stack.pop()
            if node._id in nodes:
                continue
            nodes[node._id] = node
            stack.extend(node._inputs)
        order = sorted(nodes, reverse=True)
        grads: dict[int, np.ndarray] = {self._id: np.ones_like(self.data)}
        for nid in order:
            node = nodes[nid]
            g = grads.pop(nid, None)
            if g is None:
                continue
            if node._backward_fn is not None:
                parts = node._backward_fn(g)
                for parent, part in zip(node._inputs, parts):
                    if part is None or not parent.requires_grad:
                        continue
                    acc = grads.get(parent._id)
                    grads[parent._id] = part if acc is None else acc + part
            elif node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g

    # -- operators ----------------------------------------------------------

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
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def ones(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=requires_grad)


def backward(loss: Tensor) -> None:
    loss.backward()


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# -- elementwise ----------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "add")
    out = a.data + b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._from_op(out, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "sub")
    out = a.data - b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._from_op(out, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "mul")
    out = a.data * b.data

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._from_op(out, (a, b), bw)


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "div")
    out = a.data / b.data

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return Tensor._from_op(out, (a, b), bw)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    out = a.data * s

    def bw(g):
        return (g * s,)

    return Tensor._from_op(out, (a,), bw)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    out = np.where(mask, a.data, 0.0)

    def bw(g):
        return (g * mask,)

    return Tensor._from_op(out, (a,), bw)


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)

    def bw(g):
        # floor keeps the subgradient finite when the argument is exactly 0
        return (g / (2.0 * np.maximum(out, 1e-150)),)

    return Tensor._from_op(out, (a,), bw)


def clamp_min(a: Tensor, floor: float) -> Tensor:
    floor = float(floor)
    mask = a.data > floor
    out = np.where(mask, a.data, floor)

    def bw(g):
        return (g * mask,)

    return Tensor._from_op(out, (a,), bw)


# -- reductions -----------------------------------------------------------


def _normalize_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    norm = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise AxisError(f"axis {ax} out of range for {ndim}-d tensor")
        norm.append(ax % ndim)
    if len(set(norm)) != len(norm):
        raise AxisError(f"duplicate axes in {axes}")
    return tuple(sorted(norm))


def tsum(a: Tensor, axis=None) -> Tensor:
    axes = _normalize_axes(axis, a.ndim)
    out = a.data.sum(axis=axes)

    def bw(g):
        ge = np.expand_dims(g, axes) if a.ndim else g
        return (np.broadcast_to(ge, a.shape).copy(),)

    return Tensor._from_op(out, (a,), bw)


def mean(a: Tensor, axis=None) -> Tensor:
    axes = _normalize_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if a.ndim else 1
    out = a.data.mean(axis=axes)

    def bw(g):
        ge = np.expand_dims(g, axes) if a.ndim else g
        return (np.broadcast_to(ge, a.shape) / count,)

    return Tensor._from_op(out, (a,), bw)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    (ax,) = _normalize_axes(axis, a.ndim)
    shifted = a.data - a.data.max(axis=ax, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=ax, keepdims=True)

    def bw(g):
        dot = (g * out).sum(axis=ax, keepdims=True)
        return (out * (g - dot),)

    return Tensor._from_op(out, (a,), bw)


# -- shape manipulation ----------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {a.shape} into {shape}") from None

    def bw(g):
        return (g.reshape(a.shape),)

    return Tensor._from_op(out, (a,), bw)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    if sorted(ax % a.ndim for ax in axes) != list(range(a.ndim)):
        raise AxisError(f"transpose axes {axes} invalid for {a.ndim}-d tensor")
    inv = tuple(np.argsort([ax % a.ndim for ax in axes]))
    out = np.transpose(a.data, axes)

    def bw(g):
        return (np.transpose(g, inv),)

    return Tensor._from_op(out, (a,), bw)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise ParameterError("concat requires at least one tensor")
    (ax,) = _normalize_axes(axis, tensors[0].ndim)
    out = np.concatenate([t.data for t in tensors], axis=ax)
    sizes = [t.shape[ax] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=ax))

    return Tensor._from_op(out, tensors, bw)


def getitem(a: Tensor, idx) -> Tensor:
    out = a.data[idx]
    if not isinstance(out, np.ndarray):
        out = np.asarray(out)

    def bw(g):
        ga = np.zeros_like(a.data)
        ga[idx] += g
        return (ga,)

    return Tensor._from_op(out, (a,), bw)


# -- linear algebra ---------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul requires >=2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions disagree for {a.shape} @ {b.shape}")
    try:
        batch = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: batch dimensions of {a.shape} and {b.shape} do not broadcast") from None
    out = a.data @ b.data
    m, k, n = a.shape[-2], a.shape[-1], b.shape[-1]
    _count(int(np.prod(batch, dtype=np.int64)) * m * k * n)

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return Tensor._from_op(out, (a, b), bw)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map on the trailing axis: x @ w + b."""
    return add(matmul(x, w), b)


# -- batch normalization -----------------------------------------------------


class BatchNormState:
    """Running statistics for one batch-norm site (per trailing feature)."""

    def __init__(self, num_features: int):
        self.running_mean = np.zeros(num_features)
        self.running_var = np.ones(num_features)

    def copy(self) -> "BatchNormState":
        st = BatchNormState(len(self.running_mean))
        st.running_mean = self.running_mean.copy()
        st.running_var = self.running_var.copy()
        return st


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    state: BatchNormState,
    stats_axes=None,
    eps: float = 1e-5,
    momentum: float = 0.1,
    training: bool = True,
) -> Tensor:
    """Normalize over ``stats_axes`` then apply the per-feature affine.

    Default stats axes are every axis except the last; training mode uses
    batch statistics and updates the running estimates in ``state``, eval
    mode normalizes with the stored running statistics.
    """
    if eps <= 0:
        raise ParameterError(f"batch_norm eps must be positive, got {eps}")
    axes = _normalize_axes(stats_axes if stats_axes is not None else tuple(range(x.ndim - 1)), x.ndim)
    if training:
        mu = mean(x, axes)
        # recorded as x - mu so gradients flow through the batch mean
        centered = sub(x, _expand(mu, axes, x.shape))
        var = mean(mul(centered, centered), axes)
        state.running_mean = (1.0 - momentum) * state.running_mean + momentum * mu.data
        state.running_var = (1.0 - momentum) * state.running_var + momentum * var.data
        inv = div(Tensor(1.0), sqrt(add(var, Tensor(eps))))
        xn = mul(centered, _expand(inv, axes, x.shape))
    else:
        mu = Tensor(state.running_mean)
        inv = Tensor(1.0 / np.sqrt(state.running_var + eps))
        xn = mul(sub(x, mu), inv)
    return add(mul(xn, gamma), beta)


def _expand(t: Tensor, axes: tuple[int, ...], shape: tuple[int, ...]) -> Tensor:
    """Reinsert reduced axes so ``t`` broadcasts against ``shape``."""
    new_shape = list(shape)
    for ax in axes:
        new_shape[ax] = 1
    return reshape(t, tuple(new_shape))


# -- similarity graph primitives ---------------------------------------------


def cosine_similarity_matrix(h: Tensor, floor: float = 1e-8) -> Tensor:
    """Pairwise cosine similarity of the rows of ``h`` ([w, d] -> [w, w]).

    Row norms are floored at ``floor`` so zero rows yield zero similarity
    instead of NaN.
    """
    if h.ndim < 2:
        raise ShapeError(f"cosine_similarity_matrix expects >=2-d input, got {h.shape}")
    sq = tsum(mul(h, h), axis=-1)
    norm = clamp_min(sqrt(sq), floor)
    hn = div(h, reshape(norm, norm.shape + (1,)))
    return matmul(hn, transpose(hn, tuple(range(hn.ndim - 2)) + (hn.ndim - 1, hn.ndim - 2)))


def topk_mask(scores, k: int) -> np.ndarray:
    """Binary row mask keeping the k largest entries per row.

    Ties break toward the lower column index. Selection is hard: the mask is
    a constant (no gradient flows through it). Accepts a Tensor or ndarray of
    shape [..., w, w] and returns a float64 0/1 ndarray of the same shape.
    """
    s = scores.data if isinstance(scores, Tensor) else np.asarray(scores, dtype=np.float64)
    w = s.shape[-1]
    if not 1 <= k <= w:
        raise ParameterError(f"topk_mask: k={k} outside [1, {w}]")
    # stable argsort of -s: equal scores keep ascending column order
    order = np.argsort(-s, axis=-1, kind="stable")
    mask = np.zeros_like(s)
    np.put_along_axis(mask, order[..., :k], 1.0, axis=-1)
    return mask


# -- sparse aggregation kernels ----------------------------------------------


def edge_aggregate(x: Tensor, rows: np.ndarray, cols: np.ndarray, vals: np.ndarray, num_nodes: int) -> Tensor:
    """Weighted sparse aggregation out[..., r, :] += v * x[..., c, :].

    The adjacency (rows/cols/vals in COO form) is constant; gradients flow
    through ``x`` only. Counts nnz * feature-width MACs per leading batch
    element, matching the profiler's sparse-aggregation convention.
    """
    if x.ndim < 2:
        raise ShapeError(f"edge_aggregate expects >=2-d input, got {x.shape}")
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    vals = np.asarray(vals, dtype=np.float64)
    lead = x.shape[:-2]
    feat = x.shape[-1]
    x3 = x.data.reshape((-1, x.shape[-2], feat))
    out = np.zeros((x3.shape[0], num_nodes, feat))
    contrib = x3[:, cols, :] * vals[None, :, None]
    np.add.at(out, (slice(None), rows), contrib)
    _count(x3.shape[0] * len(vals) * feat)

    def bw(g):
        g3 = g.reshape((-1, num_nodes, feat))
        gx = np.zeros_like(x3)
        back = g3[:, rows, :] * vals[None, :, None]
        np.add.at(gx, (slice(None), cols), back)
        return (gx.reshape(x.shape),)

    return Tensor._from_op(out.reshape(lead + (num_nodes, feat)), (x,), bw)


def window_aggregate(x: Tensor, idx: np.ndarray, weights: np.ndarray) -> Tensor:
    """Per-row top-k aggregation: out[b, t, :] = sum_j weights[b,t,j] * x[b, idx[b,t,j], :].

    ``idx`` and ``weights`` are [B, w, k] constants (the normalized temporal
    adjacency in rectangular form); gradients flow through ``x`` only. Counts
    B * w * k * feature-width MACs.
    """
    if x.ndim != 3:
        raise ShapeError(f"window_aggregate expects [B, w, F] input, got {x.shape}")
    idx = np.asarray(idx, dtype=np.intp)
    weights = np.asarray(weights, dtype=np.float64)
    bsz, w, k = idx.shape
    feat = x.shape[-1]
    bi = np.arange(bsz)[:, None, None]
    gathered = x.data[bi, idx, :]
    out = (gathered * weights[..., None]).sum(axis=2)
    _count(bsz * w * k * feat)

    def bw(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (bi, idx), weights[..., None] * g[:, :, None, :])
        return (gx,)

    return Tensor._from_op(out, (x,), bw)
