"""Dense float64 tensors with reverse-mode automatic differentiation.

Data lives in row-major numpy arrays. Every differentiable operation
records its operands and a backward rule; ``backward`` walks the graph
once in reverse topological order and accumulates gradients into every
reachable tensor that has ``requires_grad`` set.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

from .errors import ContractError, DegenerateInputError, ShapeError

Array = np.ndarray

LAYERNORM_EPS = 1e-5
NORMALIZE_MIN_NORM = 1e-12

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327


def _as_array(value) -> Array:
    # note: ascontiguousarray would promote 0-d to 1-d, so order="C" instead
    return np.asarray(value, dtype=np.float64, order="C")


class Tensor:
    """Dense float64 array with optional gradient tracking."""

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        *,
        op: str = "leaf",
        parents: tuple["Tensor", ...] = (),
        backward: Callable[[Array], None] | None = None,
    ):
        self.data = _as_array(data)
        self.grad: Array | None = None
        self.requires_grad = bool(requires_grad)
        self.op = op
        self._parents = parents
        self._backward = backward

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
        if self.data.size != 1:
            raise ContractError(f"item() requires a scalar tensor, got shape {self.shape}")
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False, op="detach")

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    # operator sugar -----------------------------------------------------
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

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __getitem__(self, key):
        return slice_(self, key)


def coerce(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value, requires_grad=False, op="const")


def constant(value) -> Tensor:
    return Tensor(value, requires_grad=False, op="const")


@dataclass
class Graph:
    """Topologically ordered record of the operations reachable from a root.

    ``nodes`` lists every gradient-tracked tensor with operands appearing
    before the tensors that consume them; ``backward`` walks it in reverse.
    """

    nodes: list[Tensor]


def build_graph(root: Tensor) -> Graph:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return Graph(order)


def backward(loss: Tensor) -> Graph:
    """Populate ``grad`` on every reachable gradient-tracked tensor.

    Interior gradients (and the closures holding forward activations) are
    released as soon as they are consumed, so peak memory stays near the
    size of the forward tape and only leaves carry ``grad`` afterwards.
    The graph cannot be replayed.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("backward called on a tensor with no gradient-tracked inputs")
    graph = build_graph(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(graph.nodes):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
        if node._parents:  # interior node: grad consumed, activations no longer needed
            node.grad = None
            node._backward = None
            node._parents = ()
    return graph


def _accumulate(target: Tensor, grad: Array) -> None:
    if not target.requires_grad:
        return
    if target.grad is None:
        target.grad = np.zeros_like(target.data)
    target.grad += grad


def _make(data: Array, parents: tuple[Tensor, ...], op: str, backward_fn: Callable[[Array], None]) -> Tensor:
    requires = any(p.requires_grad for p in parents)
    return Tensor(
        data,
        requires,
        op=op,
        parents=parents,
        backward=backward_fn if requires else None,
    )


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


# elementwise ------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = coerce(a), coerce(b)
    _check_broadcast(a, b, "add")
    out = a.data + b.data

    def bwd(g: Array) -> None:
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(out, (a, b), "add", bwd)


def sub(a, b) -> Tensor:
    a, b = coerce(a), coerce(b)
    _check_broadcast(a, b, "sub")
    out = a.data - b.data

    def bwd(g: Array) -> None:
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _make(out, (a, b), "sub", bwd)


def mul(a, b) -> Tensor:
    a, b = coerce(a), coerce(b)
    _check_broadcast(a, b, "mul")
    out = a.data * b.data

    def bwd(g: Array) -> None:
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(out, (a, b), "mul", bwd)


def div(a, b) -> Tensor:
    a, b = coerce(a), coerce(b)
    _check_broadcast(a, b, "div")
    out = a.data / b.data

    def bwd(g: Array) -> None:
        _accumulate(a, _unbroadcast(g / b.data, a.shape))
        _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(out, (a, b), "div", bwd)


def neg(a) -> Tensor:
    a = coerce(a)

    def bwd(g: Array) -> None:
        _accumulate(a, -g)

    return _make(-a.data, (a,), "neg", bwd)


def power(a, exponent: float) -> Tensor:
    a = coerce(a)
    p = float(exponent)
    out = a.data**p

    def bwd(g: Array) -> None:
        _accumulate(a, g * p * a.data ** (p - 1.0))

    return _make(out, (a,), "power", bwd)


def exp(a) -> Tensor:
    a = coerce(a)
    out = np.exp(a.data)

    def bwd(g: Array) -> None:
        _accumulate(a, g * out)

    return _make(out, (a,), "exp", bwd)


def log(a) -> Tensor:
    a = coerce(a)
    out = np.log(a.data)

    def bwd(g: Array) -> None:
        _accumulate(a, g / a.data)

    return _make(out, (a,), "log", bwd)


def gelu(a) -> Tensor:
    """Exact (erf-based) GELU."""
    a = coerce(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = x * cdf

    def bwd(g: Array) -> None:
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
        _accumulate(a, g * (cdf + x * pdf))

    return _make(out, (a,), "gelu", bwd)


# shape manipulation -----------------------------------------------------


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = coerce(a)
    shape = tuple(int(s) for s in shape)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from None

    def bwd(g: Array) -> None:
        _accumulate(a, g.reshape(a.shape))

    return _make(out, (a,), "reshape", bwd)


def transpose(a, axes: Sequence[int] | None = None) -> Tensor:
    a = coerce(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(int(x) for x in axes)
    out = np.ascontiguousarray(a.data.transpose(axes))
    inverse = tuple(np.argsort(axes))

    def bwd(g: Array) -> None:
        _accumulate(a, g.transpose(inverse))

    return _make(out, (a,), "transpose", bwd)


def broadcast_to(a, shape: Sequence[int]) -> Tensor:
    a = coerce(a)
    shape = tuple(int(s) for s in shape)
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot broadcast {a.shape} to {shape}") from None

    def bwd(g: Array) -> None:
        _accumulate(a, _unbroadcast(g, a.shape))

    return _make(out, (a,), "broadcast_to", bwd)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = tuple(coerce(t) for t in tensors)
    if not parts:
        raise ContractError("concat requires at least one tensor")
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum(sizes)[:-1]

    def bwd(g: Array) -> None:
        for part, piece in zip(parts, np.split(g, bounds, axis=axis)):
            _accumulate(part, piece)

    return _make(out, parts, "concat", bwd)


def slice_(a, key) -> Tensor:
    """Basic (non-fancy) indexing with slices and integers."""
    a = coerce(a)
    out = a.data[key]

    def bwd(g: Array) -> None:
        full = np.zeros_like(a.data)
        full[key] = g
        _accumulate(a, full)

    return _make(out, (a,), "slice", bwd)


def select_positions(a, positions) -> Tensor:
    """Pick one row per batch element: out[n] = a[n, positions[n]]."""
    a = coerce(a)
    idx = np.asarray(positions, dtype=np.int64)
    if a.ndim < 2 or idx.shape != (a.shape[0],):
        raise ShapeError(f"select_positions: got tensor {a.shape} and positions {idx.shape}")
    if np.any(idx < 0) or np.any(idx >= a.shape[1]):
        raise IndexError(f"select_positions: position out of range for axis of size {a.shape[1]}")
    rows = np.arange(a.shape[0])
    out = a.data[rows, idx]

    def bwd(g: Array) -> None:
        full = np.zeros_like(a.data)
        full[rows, idx] = g
        _accumulate(a, full)

    return _make(out, (a,), "select_positions", bwd)


# reductions -------------------------------------------------------------


def _normalize_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    axes = tuple(int(ax) % ndim for ax in axis)
    if len(set(axes)) != len(axes):
        raise ShapeError(f"duplicate reduction axes {axis}")
    return axes


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = coerce(a)
    axes = _normalize_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def bwd(g: Array) -> None:
        if not keepdims:
            for ax in sorted(axes):
                g = np.expand_dims(g, ax)
        _accumulate(a, np.broadcast_to(g, a.shape).copy())

    return _make(out, (a,), "sum", bwd)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = coerce(a)
    axes = _normalize_axes(axis, a.ndim)
    count = 1
    for ax in axes:
        count *= a.shape[ax]
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def bwd(g: Array) -> None:
        if not keepdims:
            for ax in sorted(axes):
                g = np.expand_dims(g, ax)
        _accumulate(a, np.broadcast_to(g, a.shape) / count)

    return _make(out, (a,), "mean", bwd)


def _argmax_forward(x: Array, axis: int) -> Array:
    # module-level so the verify suite can patch the tie-break rule
    return np.argmax(x, axis=axis)


def max_(a, axis: int, keepdims: bool = False) -> Tensor:
    """Max along one axis; ties route gradient to the lowest index."""
    a = coerce(a)
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"max: axis {axis} invalid for shape {a.shape}")
    axis = axis % a.ndim
    idx = _argmax_forward(a.data, axis=axis)
    idx_exp = np.expand_dims(idx, axis)
    picked = np.take_along_axis(a.data, idx_exp, axis=axis)
    out = picked if keepdims else np.squeeze(picked, axis=axis)

    def bwd(g: Array) -> None:
        if not keepdims:
            g = np.expand_dims(g, axis)
        full = np.zeros_like(a.data)
        np.put_along_axis(full, idx_exp, g, axis=axis)
        _accumulate(a, full)

    return _make(out, (a,), "max", bwd)


# linear algebra ---------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = coerce(a), coerce(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul requires rank >= 2 operands, got {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    try:
        out = a.data @ b.data
    except ValueError:
        raise ShapeError(f"matmul batch dimensions incompatible: {a.shape} x {b.shape}") from None

    def bwd(g: Array) -> None:
        _accumulate(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        _accumulate(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _make(out, (a, b), "matmul", bwd)


# normalization and activations ------------------------------------------


def _softmax_forward(x: Array, axis: int) -> Array:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(a, axis: int = -1) -> Tensor:
    a = coerce(a)
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"softmax: axis {axis} invalid for shape {a.shape}")
    axis = axis % a.ndim
    out = _softmax_forward(a.data, axis)

    def bwd(g: Array) -> None:
        inner = (g * out).sum(axis=axis, keepdims=True)
        _accumulate(a, out * (g - inner))

    return _make(out, (a,), "softmax", bwd)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = coerce(a)
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"log_softmax: axis {axis} invalid for shape {a.shape}")
    axis = axis % a.ndim
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def bwd(g: Array) -> None:
        _accumulate(a, g - np.exp(out) * g.sum(axis=axis, keepdims=True))

    return _make(out, (a,), "log_softmax", bwd)


def l2_normalize(a, axis: int = -1) -> Tensor:
    """Scale slices along ``axis`` to unit Euclidean norm.

    Raises instead of clamping when a slice norm falls below 1e-12, so the
    unit-norm invariant downstream is exact rather than approximate.
    """
    a = coerce(a)
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"l2_normalize: axis {axis} invalid for shape {a.shape}")
    axis = axis % a.ndim
    norms = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True))
    if np.any(norms < NORMALIZE_MIN_NORM):
        raise DegenerateInputError("l2_normalize: slice with near-zero norm")
    out = a.data / norms

    def bwd(g: Array) -> None:
        inner = (g * out).sum(axis=axis, keepdims=True)
        _accumulate(a, (g - out * inner) / norms)

    return _make(out, (a,), "l2_normalize", bwd)


def layernorm(a, gain, bias, eps: float = LAYERNORM_EPS) -> Tensor:
    """Normalize over the last axis, then apply an elementwise affine."""
    a, gain, bias = coerce(a), coerce(gain), coerce(bias)
    dim = a.shape[-1]
    if gain.shape != (dim,) or bias.shape != (dim,):
        raise ShapeError(
            f"layernorm: gain/bias must have shape ({dim},), got {gain.shape} and {bias.shape}"
        )
    mu = a.data.mean(axis=-1, keepdims=True)
    var = ((a.data - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a.data - mu) * inv
    out = xhat * gain.data + bias.data

    def bwd(g: Array) -> None:
        lead = tuple(range(g.ndim - 1))
        _accumulate(gain, (g * xhat).sum(axis=lead))
        _accumulate(bias, g.sum(axis=lead))
        dxhat = g * gain.data
        term = dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        _accumulate(a, inv * term)

    return _make(out, (a, gain, bias), "layernorm", bwd)


def embedding_lookup(table, ids) -> Tensor:
    """Gather rows of a 2-D table by integer index (any index shape)."""
    table = coerce(table)
    if table.ndim != 2:
        raise ShapeError(f"embedding_lookup: table must be 2-D, got {table.shape}")
    idx = np.asarray(ids, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(
            f"embedding_lookup: index out of range [0, {table.shape[0]}), got "
            f"[{idx.min()}, {idx.max()}]"
        )
    out = table.data[idx]

    def bwd(g: Array) -> None:
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        _accumulate(table, full)

    return _make(out, (table,), "embedding_lookup", bwd)


def cross_entropy(logits, targets) -> Tensor:
    """Mean negative log-likelihood of integer targets under row softmax."""
    logits = coerce(logits)
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy: logits must be 2-D, got {logits.shape}")
    tgt = np.asarray(targets, dtype=np.int64)
    n, v = logits.shape
    if tgt.shape != (n,):
        raise ShapeError(f"cross_entropy: targets shape {tgt.shape} does not match {n} rows")
    if tgt.size and (tgt.min() < 0 or tgt.max() >= v):
        raise IndexError(f"cross_entropy: target outside [0, {v})")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(n)
    out = -logp[rows, tgt].mean()

    def bwd(g: Array) -> None:
        p = np.exp(logp)
        p[rows, tgt] -= 1.0
        _accumulate(logits, (float(g) / n) * p)

    return _make(out, (logits,), "cross_entropy", bwd)


# convolution ------------------------------------------------------------


def conv2d(x, w, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of NCHW input with FCkk filters."""
    x, w = coerce(x), coerce(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weight, got {x.shape} and {w.shape}")
    n, c, h, width_in = x.shape
    f, wc, kh, kw = w.shape
    if wc != c:
        raise ShapeError(f"conv2d channel mismatch: input {c}, weight {wc}")
    s, p = int(stride), int(padding)
    hp, wp = h + 2 * p, width_in + 2 * p
    if kh > hp or kw > wp:
        raise ShapeError(f"conv2d kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    oh = (hp - kh) // s + 1
    ow = (wp - kw) // s + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::s, ::s]  # (n, c, oh, ow, kh, kw)
    cols = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5)).reshape(n, oh * ow, c * kh * kw)
    wf = w.data.reshape(f, c * kh * kw)
    out = (cols @ wf.T).transpose(0, 2, 1).reshape(n, f, oh, ow)

    def bwd(g: Array) -> None:
        g2 = g.reshape(n, f, oh * ow).transpose(0, 2, 1)  # (n, oh*ow, f)
        _accumulate(w, np.einsum("npf,npk->fk", g2, cols).reshape(w.shape))
        gcols = (g2 @ wf).reshape(n, oh, ow, c, kh, kw)
        gxp = np.zeros((n, c, hp, wp))
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + s * oh : s, j : j + s * ow : s] += gcols[:, :, :, :, i, j].transpose(
                    0, 3, 1, 2
                )
        _accumulate(x, gxp[:, :, p : hp - p, p : wp - p] if p else gxp)

    return _make(out, (x, w), "conv2d", bwd)
