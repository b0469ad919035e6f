"""Dense 2-D float64 tensors with tape-based reverse-mode differentiation.

Every op returns a fresh :class:`Tensor`; inputs are never mutated. When any
input requires a gradient (and recording is enabled) the output remembers
its op name, its parents and whatever context the backward rule needs.
Backward rules live in :data:`BACKWARD`, keyed by op name, so a rule can be
swapped out at runtime (the gradient suite uses that as a negative control).
"""

from __future__ import annotations

import itertools
import math
import threading
from contextlib import contextmanager
from typing import Callable, Iterator, Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Tensor",
    "Tape",
    "FlopCounter",
    "BACKWARD",
    "ShapeError",
    "no_grad",
    "count_flops",
    "matmul",
    "spmm",
    "transpose",
    "elementwise",
    "add",
    "sub",
    "mul",
    "div",
    "relu",
    "sigmoid",
    "scale",
    "row_softmax",
    "col_softmax",
    "row_log_softmax",
    "row_l1_normalize",
    "layer_norm",
    "gather_rows",
    "scatter_add_rows",
    "concat_cols",
    "slice_cols",
    "sum_all",
    "segment_attention",
    "backward",
    "grad_check",
    "check_parameters",
]

_seq = itertools.count()
_local = threading.local()


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def _grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Run ops without recording them on the tape."""
    prev = _grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = prev


class FlopCounter:
    """Monotone count of scalar multiply-adds performed by forward ops.

    Counted: ``matmul`` (n*k*m), ``mul``/``div``/``scale`` (one per output
    element) and ``segment_attention`` (scores plus weighted values).
    """

    def __init__(self) -> None:
        self.multiply_adds = 0

    def add(self, k: int) -> None:
        if k < 0:
            raise ValueError("flop increments must be nonnegative")
        self.multiply_adds += int(k)

    def reset(self) -> None:
        self.multiply_adds = 0

    def __repr__(self) -> str:
        return f"FlopCounter(multiply_adds={self.multiply_adds})"


@contextmanager
def count_flops(counter: FlopCounter | None = None) -> Iterator[FlopCounter]:
    """Attach ``counter`` (or a new one) to every op run inside the block.

    Nested blocks each see all ops executed within them.
    """
    counter = counter if counter is not None else FlopCounter()
    stack = getattr(_local, "counters", None)
    if stack is None:
        stack = _local.counters = []
    stack.append(counter)
    try:
        yield counter
    finally:
        stack.remove(counter)


def _count(k: int) -> None:
    stack = getattr(_local, "counters", None)
    if stack:
        for c in stack:
            c.add(k)


class Tensor:
    """A rows x cols float64 matrix with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "_op", "_parents", "_ctx", "_seq")

    def __init__(self, data, requires_grad: bool = False) -> None:
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"Tensor must be 2-D, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._op: str | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._ctx = None
        self._seq = -1

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape  # type: ignore[return-value]

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        tag = f", op={self._op}" if self._op else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def __add__(self, other: Tensor) -> Tensor:
        return add(self, other)

    def __sub__(self, other: Tensor) -> Tensor:
        return sub(self, other)

    def __mul__(self, other: Tensor) -> Tensor:
        return mul(self, other)

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)


def _make(op: str, data: np.ndarray, parents: tuple[Tensor, ...], ctx=None) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._op = op
        out._parents = parents
        out._ctx = ctx
        out._seq = next(_seq)
    else:
        out.requires_grad = False
        out._op = None
        out._parents = ()
        out._ctx = None
        out._seq = -1
    return out


BACKWARD: dict[str, Callable] = {}


def _register(name: str):
    def deco(fn):
        BACKWARD[name] = fn
        return fn

    return deco


# ---------------------------------------------------------------------------
# products and reshaping


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.cols != b.rows:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} x {b.shape}")
    _count(a.rows * a.cols * b.cols)
    return _make("matmul", a.data @ b.data, (a, b), (a.data, b.data))


@_register("matmul")
def _matmul_backward(ctx, g):
    a, b = ctx
    return g @ b.T, a.T @ g


def spmm(matrix: sp.spmatrix, x: Tensor) -> Tensor:
    """``matrix @ x`` for a constant scipy sparse ``matrix`` (no gradient to it)."""
    if matrix.shape[1] != x.rows:
        raise ShapeError(f"spmm: inner dimensions differ, {matrix.shape} x {x.shape}")
    _count(matrix.nnz * x.cols)
    return _make("spmm", np.asarray(matrix @ x.data), (x,), matrix)


@_register("spmm")
def _spmm_backward(matrix, g):
    return (np.asarray(matrix.T @ g),)


def transpose(a: Tensor) -> Tensor:
    return _make("transpose", np.ascontiguousarray(a.data.T), (a,))


@_register("transpose")
def _transpose_backward(ctx, g):
    return (g.T,)


# ---------------------------------------------------------------------------
# pointwise


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, kind: str) -> tuple[int, int]:
    out = []
    for x, y in zip(a.shape, b.shape):
        if x == y or y == 1:
            out.append(x)
        elif x == 1:
            out.append(y)
        else:
            raise ShapeError(f"{kind}: shapes {a.shape} and {b.shape} do not broadcast")
    return out[0], out[1]


def elementwise(a: Tensor, b: Tensor, kind: str) -> Tensor:
    """Pointwise ``add``/``sub``/``mul``/``div``.

    Either operand may be a 1 x m row, an n x 1 column or a 1 x 1 scalar that
    is broadcast against the other.
    """
    shape = _check_broadcast(a, b, kind)
    if kind == "add":
        data = a.data + b.data
    elif kind == "sub":
        data = a.data - b.data
    elif kind == "mul":
        data = a.data * b.data
        _count(shape[0] * shape[1])
    elif kind == "div":
        data = a.data / b.data
        _count(shape[0] * shape[1])
    else:
        raise ValueError(f"unknown elementwise kind {kind!r}")
    return _make(kind, data, (a, b), (a.data, b.data))


def add(a: Tensor, b: Tensor) -> Tensor:
    return elementwise(a, b, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    return elementwise(a, b, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    return elementwise(a, b, "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    return elementwise(a, b, "div")


@_register("add")
def _add_backward(ctx, g):
    a, b = ctx
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


@_register("sub")
def _sub_backward(ctx, g):
    a, b = ctx
    return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)


@_register("mul")
def _mul_backward(ctx, g):
    a, b = ctx
    return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


@_register("div")
def _div_backward(ctx, g):
    a, b = ctx
    ga = g / b
    return _unbroadcast(ga, a.shape), _unbroadcast(-ga * a / b, b.shape)


def relu(a: Tensor) -> Tensor:
    return _make("relu", np.maximum(a.data, 0.0), (a,), a.data > 0)


@_register("relu")
def _relu_backward(mask, g):
    # subgradient 0 at 0
    return (g * mask,)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make("sigmoid", y, (a,), y)


@_register("sigmoid")
def _sigmoid_backward(y, g):
    return (g * y * (1.0 - y),)


def scale(a: Tensor, c: float) -> Tensor:
    _count(a.data.size)
    return _make("scale", a.data * c, (a,), c)


@_register("scale")
def _scale_backward(c, g):
    return (g * c,)


# ---------------------------------------------------------------------------
# normalisations


def row_softmax(a: Tensor) -> Tensor:
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)
    return _make("row_softmax", y, (a,), y)


@_register("row_softmax")
def _row_softmax_backward(y, g):
    return (y * (g - (g * y).sum(axis=1, keepdims=True)),)


def _segment_starts(offsets: np.ndarray, total: int) -> tuple[np.ndarray, np.ndarray]:
    """Start rows and per-row segment index of the nonempty segments."""
    offsets = np.asarray(offsets, dtype=np.int64)
    if offsets[0] != 0 or offsets[-1] != total or np.any(np.diff(offsets) < 0):
        raise ValueError(f"segment offsets {offsets.tolist()} do not tile {total} rows")
    sizes = np.diff(offsets)
    keep = sizes > 0
    starts = offsets[:-1][keep]
    seg_of_row = np.repeat(np.arange(starts.size), sizes[keep])
    return starts, seg_of_row


def col_softmax(a: Tensor, offsets: Sequence[int] | np.ndarray | None = None) -> Tensor:
    """Softmax down each column, independently inside each row segment.

    ``offsets`` lists segment boundaries (``[0, n1, n1 + n2, ..., n]``);
    ``None`` treats the whole matrix as one segment.
    """
    x = a.data
    if offsets is None or len(offsets) <= 2:
        if offsets is not None and (offsets[0] != 0 or offsets[-1] != x.shape[0]):
            raise ValueError(f"segment offsets {list(offsets)} do not tile {x.shape[0]} rows")
        e = np.exp(x - x.max(axis=0, keepdims=True))
        y = e / e.sum(axis=0, keepdims=True)
        return _make("col_softmax", y, (a,), (y, None, None))
    starts, seg = _segment_starts(np.asarray(offsets), x.shape[0])
    if x.shape[0] == 0:
        return _make("col_softmax", x.copy(), (a,), (x.copy(), starts, seg))
    mx = np.maximum.reduceat(x, starts, axis=0)
    e = np.exp(x - mx[seg])
    y = e / np.add.reduceat(e, starts, axis=0)[seg]
    return _make("col_softmax", y, (a,), (y, starts, seg))


@_register("col_softmax")
def _col_softmax_backward(ctx, g):
    y, starts, seg = ctx
    gy = g * y
    if starts is None:
        return (y * (g - gy.sum(axis=0, keepdims=True)),)
    if y.shape[0] == 0:
        return (np.zeros_like(y),)
    return (y * (g - np.add.reduceat(gy, starts, axis=0)[seg]),)


def row_log_softmax(a: Tensor) -> Tensor:
    z = a.data - a.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    y = z - lse
    return _make("row_log_softmax", y, (a,), y)


@_register("row_log_softmax")
def _row_log_softmax_backward(y, g):
    return (g - np.exp(y) * g.sum(axis=1, keepdims=True),)


def row_l1_normalize(a: Tensor, epsilon: float = 1e-12) -> Tensor:
    """Divide each row by (its sum + ``epsilon``); entries assumed nonnegative."""
    s = a.data.sum(axis=1, keepdims=True) + epsilon
    y = a.data / s
    return _make("row_l1_normalize", y, (a,), (y, s))


@_register("row_l1_normalize")
def _row_l1_backward(ctx, g):
    y, s = ctx
    return ((g - (g * y).sum(axis=1, keepdims=True)) / s,)


def layer_norm(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Standardise each row (zero mean, unit variance); no affine part."""
    x = a.data
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=1, keepdims=True) + eps)
    y = xc * inv
    return _make("layer_norm", y, (a,), (y, inv))


@_register("layer_norm")
def _layer_norm_backward(ctx, g):
    y, inv = ctx
    gm = g.mean(axis=1, keepdims=True)
    gym = (g * y).mean(axis=1, keepdims=True)
    return (inv * (g - gm - y * gym),)


# ---------------------------------------------------------------------------
# indexing


def _check_index(idx, n: int, what: str) -> np.ndarray:
    idx = np.asarray(idx, dtype=np.int64).reshape(-1)
    bad = np.nonzero((idx < 0) | (idx >= n))[0]
    if bad.size:
        p = int(bad[0])
        raise IndexError(f"{what}: index {int(idx[p])} at position {p} out of range for {n} rows")
    return idx


def gather_rows(a: Tensor, idx) -> Tensor:
    idx = _check_index(idx, a.rows, "gather_rows")
    return _make("gather_rows", a.data[idx], (a,), (idx, a.rows))


def _row_sums(values: np.ndarray, idx: np.ndarray, n: int) -> np.ndarray:
    # out[idx[r]] += values[r] as an incidence-matrix product; each row sums in ascending r
    m = len(idx)
    incidence = sp.csr_matrix((np.ones(m), (idx, np.arange(m))), shape=(n, m))
    return np.asarray(incidence @ values)


@_register("gather_rows")
def _gather_backward(ctx, g):
    idx, n = ctx
    return (_row_sums(g, idx, n),)


def scatter_add_rows(src: Tensor, idx, n: int) -> Tensor:
    """Sum row ``k`` of ``src`` into row ``idx[k]`` of an n-row zero matrix.

    Accumulation runs in ascending ``k`` order, so results are reproducible
    bit for bit.
    """
    idx = _check_index(idx, n, "scatter_add_rows")
    if idx.size != src.rows:
        raise ShapeError(f"scatter_add_rows: {idx.size} indices for {src.rows} rows")
    return _make("scatter_add_rows", _row_sums(src.data, idx, n), (src,), idx)


@_register("scatter_add_rows")
def _scatter_backward(idx, g):
    return (g[idx],)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("concat_cols needs at least one part")
    rows = {p.rows for p in parts}
    if len(rows) != 1:
        raise ShapeError(f"concat_cols: row counts differ {[p.shape for p in parts]}")
    widths = [p.cols for p in parts]
    return _make("concat_cols", np.concatenate([p.data for p in parts], axis=1), tuple(parts), widths)


@_register("concat_cols")
def _concat_backward(widths, g):
    cuts = np.cumsum([0] + widths)
    return tuple(g[:, cuts[i] : cuts[i + 1]] for i in range(len(widths)))


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if not (0 <= start < stop <= a.cols):
        raise IndexError(f"slice_cols: [{start}, {stop}) outside 0..{a.cols}")
    return _make("slice_cols", a.data[:, start:stop].copy(), (a,), (start, stop, a.shape))


@_register("slice_cols")
def _slice_backward(ctx, g):
    start, stop, shape = ctx
    out = np.zeros(shape)
    out[:, start:stop] = g
    return (out,)


def sum_all(a: Tensor) -> Tensor:
    return _make("sum_all", np.array([[a.data.sum()]]), (a,), a.shape)


@_register("sum_all")
def _sum_backward(shape, g):
    return (np.full(shape, g[0, 0]),)


# ---------------------------------------------------------------------------
# fused segmented attention


def _size_groups(offsets: np.ndarray) -> list[np.ndarray]:
    """Row-index blocks (graphs x size) grouping equal-sized segments."""
    offsets = np.asarray(offsets, dtype=np.int64)
    sizes = np.diff(offsets)
    groups = []
    for s in np.unique(sizes):
        if s == 0:
            continue
        which = np.nonzero(sizes == s)[0]
        groups.append(offsets[which][:, None] + np.arange(s)[None, :])
    return groups


def segment_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    offsets,
    heads: int,
    record: list | None = None,
) -> Tensor:
    """Multi-head softmax attention restricted to each row segment.

    Column block ``h`` of width ``d / heads`` of q, k and v forms head ``h``.
    For every segment (graph) the head computes
    ``row_softmax(Q K^T / sqrt(d / heads)) V`` over that segment's rows only,
    which is the block-diagonal masking of a full n x n attention matrix.
    If ``record`` is given, ``(rows, probs)`` pairs are appended with
    ``probs`` shaped (graphs, heads, size, size).
    """
    n, d = q.shape
    if k.shape != (n, d) or v.shape != (n, d):
        raise ShapeError(f"segment_attention: q {q.shape}, k {k.shape}, v {v.shape}")
    if d % heads:
        raise ShapeError(f"segment_attention: width {d} not divisible by {heads} heads")
    offsets = np.asarray(offsets, dtype=np.int64)
    if offsets[0] != 0 or offsets[-1] != n:
        raise ValueError(f"segment offsets {offsets.tolist()} do not tile {n} rows")
    dh = d // heads
    c = 1.0 / math.sqrt(dh)
    out = np.empty((n, d))
    saved = []
    for rows in _size_groups(offsets):
        G, s = rows.shape
        Q = q.data[rows].reshape(G, s, heads, dh).transpose(0, 2, 1, 3)
        K = k.data[rows].reshape(G, s, heads, dh).transpose(0, 2, 1, 3)
        V = v.data[rows].reshape(G, s, heads, dh).transpose(0, 2, 1, 3)
        S = (Q @ K.transpose(0, 1, 3, 2)) * c
        S -= S.max(axis=-1, keepdims=True)
        P = np.exp(S)
        P /= P.sum(axis=-1, keepdims=True)
        O = P @ V
        out[rows.reshape(-1)] = O.transpose(0, 2, 1, 3).reshape(G * s, d)
        _count(2 * G * s * s * d)
        saved.append((rows, Q, K, V, P))
        if record is not None:
            record.append((rows, P.copy()))
    return _make("segment_attention", out, (q, k, v), (saved, heads, c, n, d))


@_register("segment_attention")
def _segment_attention_backward(ctx, g):
    saved, heads, c, n, d = ctx
    dq = np.zeros((n, d))
    dk = np.zeros((n, d))
    dv = np.zeros((n, d))
    dh = d // heads
    for rows, Q, K, V, P in saved:
        G, s = rows.shape
        flat = rows.reshape(-1)
        dO = g[flat].reshape(G, s, heads, dh).transpose(0, 2, 1, 3)
        dV = P.transpose(0, 1, 3, 2) @ dO
        dP = dO @ V.transpose(0, 1, 3, 2)
        dS = P * (dP - (dP * P).sum(axis=-1, keepdims=True)) * c
        dQ = dS @ K
        dK = dS.transpose(0, 1, 3, 2) @ Q

        def back(x):
            return x.transpose(0, 2, 1, 3).reshape(G * s, d)

        dq[flat] = back(dQ)
        dk[flat] = back(dK)
        dv[flat] = back(dV)
    return dq, dk, dv


# ---------------------------------------------------------------------------
# reverse sweep


class Tape:
    """Recorded ops reachable from an output, in execution order."""

    def __init__(self, ops: list[Tensor]) -> None:
        self.ops = ops

    @classmethod
    def from_output(cls, out: Tensor) -> Tape:
        seen: set[int] = set()
        nodes: list[Tensor] = []
        stack = [out]
        while stack:
            t = stack.pop()
            if id(t) in seen or t._op is None:
                continue
            seen.add(id(t))
            nodes.append(t)
            stack.extend(p for p in t._parents if p.requires_grad)
        nodes.sort(key=lambda t: t._seq)
        return cls(nodes)

    def __len__(self) -> int:
        return len(self.ops)

    def __iter__(self):
        return iter(self.ops)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if loss.shape != (1, 1):
        raise ShapeError(f"backward needs a 1x1 loss, got {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tensor that requires grad")
    if loss._op is None:
        loss.grad = np.ones((1, 1)) if loss.grad is None else loss.grad + 1.0
        return
    tape = Tape.from_output(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
    for node in reversed(tape.ops):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        parent_grads = BACKWARD[node._op](node._ctx, g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            if p._op is None:
                p.grad = np.array(pg, dtype=np.float64) if p.grad is None else p.grad + pg
            else:
                key = id(p)
                grads[key] = pg if key not in grads else grads[key] + pg


# ---------------------------------------------------------------------------
# finite differences


def _rel_err(a: np.ndarray, n: np.ndarray) -> float:
    if a.size == 0:
        return 0.0
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
    return float(np.max(np.abs(a - n) / denom))


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5) -> float:
    """Largest relative gap between backprop and central differences.

    ``f`` maps a tensor shaped like ``x`` to a 1x1 tensor. Returns
    ``max_i |a_i - n_i| / max(1, |a_i|, |n_i|)``.
    """
    xa = Tensor(x.data, requires_grad=True)
    backward(f(xa))
    analytic = xa.grad if xa.grad is not None else np.zeros_like(x.data)
    numeric = np.empty_like(x.data)
    with no_grad():
        for i in np.ndindex(*x.shape):
            xp = x.data.copy()
            xp[i] += h
            fp = f(Tensor(xp)).item()
            xp[i] -= 2 * h
            fm = f(Tensor(xp)).item()
            numeric[i] = (fp - fm) / (2 * h)
    return _rel_err(analytic, numeric)


def check_parameters(
    loss_fn: Callable[[], Tensor],
    params: dict[str, Tensor],
    h: float = 1e-5,
) -> dict[str, float]:
    """Per-parameter :func:`grad_check` error for a closure over ``params``.

    Parameters are nudged in place one coordinate at a time and restored.
    """
    for p in params.values():
        p.grad = None
    loss = loss_fn()
    if loss.requires_grad:
        backward(loss)
    errors = {}
    with no_grad():
        for name, p in params.items():
            analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
            numeric = np.empty_like(p.data)
            for i in np.ndindex(*p.shape):
                orig = p.data[i]
                p.data[i] = orig + h
                fp = loss_fn().item()
                p.data[i] = orig - h
                fm = loss_fn().item()
                p.data[i] = orig
                numeric[i] = (fp - fm) / (2 * h)
            errors[name] = _rel_err(analytic, numeric)
    for p in params.values():
        p.grad = None
    return errors
