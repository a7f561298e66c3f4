"""Reverse-mode automatic differentiation over a small fixed op set.

Graphs are built eagerly: each op validates shapes, computes its value in
float64, and records a backward closure. `backward` walks the graph once in
reverse topological order and accumulates gradients into `.grad` arrays.
The op vocabulary is deliberately closed; model code composes these ops and
nothing else, so a finite-difference check over the full set covers every
gradient path the package can produce.
"""
from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from .errors import NumericError, ShapeMismatchError

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)

# Variance floor inside layernorm's sqrt. Kept far below float64 rounding
# noise so normalized outputs have unit variance to ~1e-13 even on tiny
# vectors, while still guarding the all-constant-row edge case.
LAYERNORM_EPS = 1e-13


class Tensor:
    """A node in the computation graph.

    Leaves are created directly (see `constant` / `parameter`); interior
    nodes are created by the op functions below. `data` is always a float64
    ndarray, `grad` is either None or an ndarray of the same shape.
    """

    __slots__ = ("data", "grad", "op", "parents", "requires_grad", "_backward")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        op: str = "leaf",
        parents: tuple = (),
        backward: Optional[Callable] = None,
    ):
        if type(data) is np.ndarray and data.dtype == np.float64:
            arr = data
        else:
            arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.op = op
        self.parents = parents
        self.requires_grad = requires_grad
        self._backward = backward

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.data.shape})"


def constant(data) -> Tensor:
    """Leaf that never receives a gradient."""
    return Tensor(data, requires_grad=False)


def parameter(data) -> Tensor:
    """Trainable leaf."""
    return Tensor(data, requires_grad=True)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


def _node(value, op: str, parents: tuple, backward: Callable) -> Tensor:
    rg = any(p.requires_grad for p in parents)
    return Tensor(value, requires_grad=rg, op=op, parents=parents, backward=backward)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# ops


def matmul(a, b, transpose_b: bool = False) -> Tensor:
    """`a @ b` (or `a @ b.T`). `a` may be 1-D or 2-D, `b` must be 2-D."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim not in (1, 2) or b.data.ndim != 2:
        raise ShapeMismatchError(
            f"matmul: need a 1-D/2-D and b 2-D, got {a.shape} and {b.shape}"
        )
    inner_a = a.shape[-1]
    inner_b = b.shape[1] if transpose_b else b.shape[0]
    if inner_a != inner_b:
        raise ShapeMismatchError(
            f"matmul: inner dims differ, {a.shape} @ {b.shape}"
            f"{'.T' if transpose_b else ''}"
        )
    bmat = b.data.T if transpose_b else b.data
    value = a.data @ bmat

    def bwd(g):
        da = g @ bmat.T
        if transpose_b:
            # value = a @ b.T  ->  db = g.T @ a  (outer products when a is 1-D)
            db = np.outer(g, a.data) if a.data.ndim == 1 else g.T @ a.data
        else:
            db = np.outer(a.data, g) if a.data.ndim == 1 else a.data.T @ g
        return da, db

    return _node(value, "matmul", (a, b), bwd)


def add(a, b) -> Tensor:
    """Elementwise sum with numpy broadcasting."""
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        value = a.data + b.data
    except ValueError:
        raise ShapeMismatchError(f"add: cannot broadcast {a.shape} with {b.shape}")

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _node(value, "add", (a, b), bwd)


def mul_scalar(a, c: float) -> Tensor:
    """Multiply every element by the python scalar `c`."""
    a = _as_tensor(a)
    c = float(c)
    value = a.data * c

    def bwd(g):
        return (g * c,)

    return _node(value, "mul-scalar", (a,), bwd)


def layernorm(a, gain=None, bias=None) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then optionally
    apply a per-coordinate affine (gain, bias), each of shape (d,)."""
    a = _as_tensor(a)
    if a.data.ndim < 1:
        raise ShapeMismatchError("layernorm: need rank >= 1, got a scalar")
    d = a.shape[-1]
    gain_t = _as_tensor(gain) if gain is not None else None
    bias_t = _as_tensor(bias) if bias is not None else None
    for name, t in (("gain", gain_t), ("bias", bias_t)):
        if t is not None and t.shape != (d,):
            raise ShapeMismatchError(
                f"layernorm: {name} shape {t.shape} does not match last axis ({d},)"
            )
    parents = tuple([a] + [t for t in (gain_t, bias_t) if t is not None])

    inv_d = 1.0 / d
    mu = a.data.sum(axis=-1, keepdims=True) * inv_d
    xc = a.data - mu
    var = (xc * xc).sum(axis=-1, keepdims=True) * inv_d
    inv = 1.0 / np.sqrt(var + LAYERNORM_EPS)
    xhat = xc * inv
    value = xhat
    if gain_t is not None:
        value = value * gain_t.data
    if bias_t is not None:
        value = value + bias_t.data

    def bwd(g):
        lead = tuple(range(g.ndim - 1))
        out = []
        dxhat = g * gain_t.data if gain_t is not None else g
        m1 = dxhat.sum(axis=-1, keepdims=True) * inv_d
        m2 = (dxhat * xhat).sum(axis=-1, keepdims=True) * inv_d
        out.append(inv * (dxhat - m1 - xhat * m2))
        if gain_t is not None:
            out.append((g * xhat).sum(axis=lead))
        if bias_t is not None:
            out.append(g.sum(axis=lead))
        return tuple(out)

    return _node(value, "layernorm", parents, bwd)


def softmax(a) -> Tensor:
    """Softmax along the last axis, shift-stabilized."""
    a = _as_tensor(a)
    if a.data.ndim < 1:
        raise ShapeMismatchError("softmax: need rank >= 1, got a scalar")
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return ((g - dot) * y,)

    return _node(y, "softmax", (a,), bwd)


def gelu(a) -> Tensor:
    """Exact (erf-based) GELU."""
    a = _as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    value = x * cdf

    def bwd(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
        return (g * (cdf + x * pdf),)

    return _node(value, "gelu", (a,), bwd)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0.0

    def bwd(g):
        return (g * mask,)

    return _node(np.where(mask, a.data, 0.0), "relu", (a,), bwd)


def conv1d(x, w, b, stride: int = 1) -> Tensor:
    """Valid 1-D convolution over the time axis.

    x: (L, C_in), w: (K, C_in, C_out), b: (C_out,). Output (L_out, C_out)
    with L_out = (L - K) // stride + 1.
    """
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.data.ndim != 2 or w.data.ndim != 3 or b.data.ndim != 1:
        raise ShapeMismatchError(
            f"conv1d: need x (L,C_in), w (K,C_in,C_out), b (C_out,), "
            f"got {x.shape}, {w.shape}, {b.shape}"
        )
    L, c_in = x.shape
    K, wc_in, c_out = w.shape
    if wc_in != c_in or b.shape[0] != c_out:
        raise ShapeMismatchError(
            f"conv1d: channel mismatch, x {x.shape}, w {w.shape}, b {b.shape}"
        )
    if stride < 1 or L < K:
        raise ShapeMismatchError(
            f"conv1d: input length {L} shorter than kernel {K} (stride {stride})"
        )
    # windows[t, k, c] == x[t + k, c]; stride by slicing the window axis,
    # then one flat matmul instead of an einsum (faster at these sizes)
    windows = sliding_window_view(x.data, K, axis=0)[::stride].transpose(0, 2, 1)
    L_out = windows.shape[0]
    flat = windows.reshape(L_out, K * c_in)
    w_flat = w.data.reshape(K * c_in, c_out)
    value = flat @ w_flat + b.data

    def bwd(g):
        dw = (flat.T @ g).reshape(K, c_in, c_out)
        db = g.sum(axis=0)
        dx = np.zeros_like(x.data)
        for k in range(K):
            # output step t consumed x[t*stride + k]
            dx[k : k + stride * (L_out - 1) + 1 : stride] += g @ w.data[k].T
        return dx, dw, db

    return _node(value, "conv1d", (x, w, b), bwd)


def mean_pool(a) -> Tensor:
    """Mean over axis 0: (T, d) -> (d,), (d,) -> scalar."""
    a = _as_tensor(a)
    if a.data.ndim < 1:
        raise ShapeMismatchError("mean_pool: need rank >= 1, got a scalar")
    T = a.shape[0]

    def bwd(g):
        return (np.broadcast_to(np.asarray(g) / T, a.data.shape).copy(),)

    return _node(a.data.mean(axis=0), "mean-pool", (a,), bwd)


def slice_axis(a, start: int, stop: int, axis: int = 0) -> Tensor:
    """Contiguous slice [start:stop) along `axis`."""
    a = _as_tensor(a)
    n = a.data.ndim
    if not -n <= axis < n:
        raise ShapeMismatchError(f"slice: axis {axis} out of range for {a.shape}")
    axis = axis % n
    dim = a.shape[axis]
    if not (0 <= start < stop <= dim):
        raise ShapeMismatchError(
            f"slice: [{start}:{stop}) invalid for axis {axis} of {a.shape}"
        )
    idx = tuple([slice(None)] * axis + [slice(start, stop)])
    value = a.data[idx].copy()

    def bwd(g):
        da = np.zeros_like(a.data)
        da[idx] += g
        return (da,)

    return _node(value, "slice", (a,), bwd)


def concat(parts: Sequence, axis: int = 0) -> Tensor:
    """Concatenate tensors along `axis`."""
    parts = tuple(_as_tensor(p) for p in parts)
    if not parts:
        raise ShapeMismatchError("concat: need at least one input")
    ndims = {p.data.ndim for p in parts}
    if len(ndims) != 1:
        raise ShapeMismatchError(
            f"concat: rank mismatch {[p.shape for p in parts]}"
        )
    try:
        value = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError:
        raise ShapeMismatchError(
            f"concat: incompatible shapes {[p.shape for p in parts]} on axis {axis}"
        )
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def bwd(g):
        sl = [slice(None)] * g.ndim
        out = []
        for i in range(len(parts)):
            sl[axis] = slice(bounds[i], bounds[i + 1])
            out.append(g[tuple(sl)])
        return tuple(out)

    return _node(value, "concat", parts, bwd)


def embedding_add(a, table: np.ndarray) -> Tensor:
    """Add a fixed (non-trainable) table of exactly matching shape.

    Used for positional encodings; the table is data, not a graph node, so
    the gradient passes straight through to `a`.
    """
    a = _as_tensor(a)
    table = np.asarray(table, dtype=np.float64)
    if table.shape != a.data.shape:
        raise ShapeMismatchError(
            f"embedding-add: table {table.shape} does not match input {a.shape}"
        )

    def bwd(g):
        return (g,)

    return _node(a.data + table, "embedding-add", (a,), bwd)


def cross_entropy(logits, label: int) -> Tensor:
    """Negative log-softmax of the true class; logsumexp-stabilized scalar."""
    logits = _as_tensor(logits)
    if logits.data.ndim != 1:
        raise ShapeMismatchError(
            f"cross-entropy: need 1-D logits, got {logits.shape}"
        )
    n = logits.shape[0]
    label = int(label)
    if not 0 <= label < n:
        raise ShapeMismatchError(f"cross-entropy: label {label} out of range [0,{n})")
    z = logits.data
    m = z.max()
    lse = m + np.log(np.exp(z - m).sum())
    value = lse - z[label]

    def bwd(g):
        p = np.exp(z - lse)
        p[label] -= 1.0
        return (g * p,)

    return _node(value, "cross-entropy", (logits,), bwd)


# ---------------------------------------------------------------------------
# graph traversal


def _topo(root: Tensor) -> list:
    """Reverse-postorder list of grad-requiring nodes reachable from root."""
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            stack.append((p, False))
    return order


def forward(root: Tensor, check_finite: bool = True) -> np.ndarray:
    """Return the value at `root`, optionally verifying every node is finite.

    Values are computed eagerly at construction; this validates and reads
    them out. Raises NumericError if any node holds NaN/Inf.
    """
    if check_finite:
        stack, seen = [root], set()
        while stack:
            node = stack.pop()
            if id(node) in seen:
                continue
            seen.add(id(node))
            if not np.all(np.isfinite(node.data)):
                raise NumericError(f"non-finite value in op {node.op!r}")
            stack.extend(node.parents)
    return root.data


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(node) into `.grad` for every reachable node.

    `loss` must be scalar. Grads add into existing `.grad` buffers (zero-init
    if absent), so callers zero their parameters between steps; leaves not
    reachable from `loss` are simply never touched.
    """
    if loss.data.shape != ():
        raise ShapeMismatchError(
            f"backward: loss must be a scalar, got shape {loss.data.shape}"
        )
    if not np.isfinite(loss.data):
        raise NumericError("backward: loss is not finite")
    if not loss.requires_grad:
        return
    order = _topo(loss)
    if loss.grad is None:
        loss.grad = np.zeros_like(loss.data)
    loss.grad = loss.grad + 1.0
    for node in reversed(order):
        if node._backward is None:
            continue
        grads = node._backward(node.grad)
        for p, g in zip(node.parents, grads):
            if not p.requires_grad:
                continue
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
            p.grad += g


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()


def finite_difference_grad(f: Callable, p: Tensor, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar `f(p)` w.r.t. every entry of `p`.

    `f` is called with `p` after perturbing `p.data` in place; the original
    values are restored before returning. This is the independent oracle for
    `backward` and is O(2 * p.size) evaluations, so keep `f` small.
    """
    base = p.data.copy()
    out = np.zeros_like(base)
    flat_data = p.data.reshape(-1)
    flat_out = out.reshape(-1)
    flat_base = base.reshape(-1)
    for i in range(flat_base.size):
        flat_data[i] = flat_base[i] + eps
        hi = f(p)
        flat_data[i] = flat_base[i] - eps
        lo = f(p)
        flat_data[i] = flat_base[i]
        hi = float(hi.data) if isinstance(hi, Tensor) else float(hi)
        lo = float(lo.data) if isinstance(lo, Tensor) else float(lo)
        flat_out[i] = (hi - lo) / (2.0 * eps)
    return out
