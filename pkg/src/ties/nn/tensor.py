"""Reverse-mode autodiff over 2-D float64 arrays.

Everything is a matrix: row vectors are 1 x n, scalars are 1 x 1. Values are
kept in row-major (C-contiguous) numpy arrays of 64-bit floats so that
finite-difference gradient checking is decisive. Each op builds a node with a
closure that scatters the incoming gradient to its parents; ``backward`` walks
the tape in reverse topological order.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ties.errors import ConfigError, ContractViolation, ShapeError

__all__ = [
    "Tensor",
    "Parameter",
    "matmul",
    "matmul_nt",
    "add",
    "sub",
    "mul",
    "mul_array",
    "scale",
    "relu",
    "sigmoid",
    "tanh",
    "sum_all",
    "concat_cols",
    "slice_cols",
    "take_row",
    "stack_rows",
    "gather_rows",
    "unfold_rows",
    "softmax_rows",
    "pool_rows",
    "dropout",
    "weighted_bce",
    "weighted_bce_loss",
]


def _as_matrix(value) -> np.ndarray:
    v = np.asarray(value, dtype=np.float64)
    if v.ndim == 0:
        v = v.reshape(1, 1)
    elif v.ndim == 1:
        v = v.reshape(1, -1)
    elif v.ndim != 2:
        raise ShapeError(f"expected a 2-D value, got shape {v.shape}")
    return np.ascontiguousarray(v)


class Tensor:
    """One node of the computation graph.

    ``value`` holds the forward result; ``grad`` accumulates d(loss)/d(value)
    during ``backward``. Intermediate nodes are created fresh on every forward
    pass, so only ``Parameter`` gradients persist across passes.
    """

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, value, requires_grad: bool = False,
                 parents: tuple = (), backward: Callable | None = None):
        self.value = _as_matrix(value)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def rows(self) -> int:
        return self.value.shape[0]

    @property
    def cols(self) -> int:
        return self.value.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def item(self) -> float:
        if self.value.size != 1:
            raise ShapeError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.value[0, 0])

    def backward(self, seed: float = 1.0) -> None:
        """Propagate d(loss) from this scalar node back to all parameters.

        ``seed`` scales the whole gradient; training uses 1/batch_size so that
        per-example backward calls accumulate the batch-mean gradient in a
        fixed order.
        """
        if self.value.size != 1:
            raise ShapeError("backward() requires a scalar (1x1) loss tensor")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
        _accumulate(self, np.full((1, 1), seed))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """A trainable tensor with its Adam state.

    ``grad``, ``adam_m`` and ``adam_v`` are all-zero at creation and share the
    value's shape. ``frozen_rows`` lists row indices whose gradient is cleared
    before every optimizer step (used for the padding-action embedding).
    """

    __slots__ = ("adam_m", "adam_v", "step_count", "frozen_rows", "name")

    def __init__(self, value, name: str = ""):
        super().__init__(value, requires_grad=True)
        self.grad = np.zeros_like(self.value)
        self.adam_m = np.zeros_like(self.value)
        self.adam_v = np.zeros_like(self.value)
        self.step_count = 0
        self.frozen_rows: tuple[int, ...] = ()
        self.name = name

    def zero_grad(self) -> None:
        self.grad[:] = 0.0

    def __repr__(self) -> str:
        return f"Parameter(name={self.name!r}, shape={self.shape})"


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.value)
    t.grad += g


def _node(value: np.ndarray, parents: Sequence[Tensor],
          backward: Callable) -> Tensor:
    req = any(p.requires_grad for p in parents)
    if not req:
        return Tensor(value)
    return Tensor(value, requires_grad=True, parents=tuple(parents), backward=backward)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.cols != b.rows:
        raise ShapeError(f"matmul shapes {a.shape} x {b.shape} do not conform")
    out_val = a.value @ b.value

    def bw(g):
        if a.requires_grad:
            _accumulate(a, g @ b.value.T)
        if b.requires_grad:
            _accumulate(b, a.value.T @ g)

    return _node(out_val, (a, b), bw)


def matmul_nt(a: Tensor, b: Tensor) -> Tensor:
    """a @ b.T without materializing a transpose node."""
    if a.cols != b.cols:
        raise ShapeError(f"matmul_nt shapes {a.shape} x {b.shape}^T do not conform")
    out_val = a.value @ b.value.T

    def bw(g):
        if a.requires_grad:
            _accumulate(a, g @ b.value)
        if b.requires_grad:
            _accumulate(b, g.T @ a.value)

    return _node(out_val, (a, b), bw)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add; ``b`` may be a 1 x cols row broadcast over a's rows."""
    if b.shape == a.shape:
        broadcast = False
    elif b.rows == 1 and b.cols == a.cols:
        broadcast = True
    else:
        raise ShapeError(f"add shapes {a.shape} + {b.shape} do not conform")
    out_val = a.value + b.value

    def bw(g):
        if a.requires_grad:
            _accumulate(a, g)
        if b.requires_grad:
            _accumulate(b, g.sum(axis=0, keepdims=True) if broadcast else g)

    return _node(out_val, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"sub shapes {a.shape} - {b.shape} do not conform")
    out_val = a.value - b.value

    def bw(g):
        if a.requires_grad:
            _accumulate(a, g)
        if b.requires_grad:
            _accumulate(b, -g)

    return _node(out_val, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul shapes {a.shape} * {b.shape} do not conform")
    out_val = a.value * b.value

    def bw(g):
        if a.requires_grad:
            _accumulate(a, g * b.value)
        if b.requires_grad:
            _accumulate(b, g * a.value)

    return _node(out_val, (a, b), bw)


def mul_array(a: Tensor, const: np.ndarray) -> Tensor:
    """Elementwise multiply by a constant (numpy-broadcastable) array."""
    c = np.asarray(const, dtype=np.float64)
    out_val = a.value * c

    def bw(g):
        _accumulate(a, g * c)

    return _node(out_val, (a,), bw)


def scale(a: Tensor, c: float) -> Tensor:
    out_val = a.value * c

    def bw(g):
        _accumulate(a, g * c)

    return _node(out_val, (a,), bw)


# ---------------------------------------------------------------------------
# nonlinearities


def relu(a: Tensor) -> Tensor:
    out_val = np.maximum(a.value, 0.0)

    def bw(g):
        _accumulate(a, g * (a.value > 0.0))

    return _node(out_val, (a,), bw)


def _sigmoid_stable(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid_stable(a.value)

    def bw(g):
        _accumulate(a, g * s * (1.0 - s))

    return _node(s, (a,), bw)


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.value)

    def bw(g):
        _accumulate(a, g * (1.0 - t * t))

    return _node(t, (a,), bw)


def sum_all(a: Tensor) -> Tensor:
    out_val = np.array([[a.value.sum()]])

    def bw(g):
        _accumulate(a, np.full_like(a.value, g[0, 0]))

    return _node(out_val, (a,), bw)


# ---------------------------------------------------------------------------
# structural ops


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("concat_cols of zero parts")
    rows = parts[0].rows
    for p in parts:
        if p.rows != rows:
            raise ShapeError(f"concat_cols row mismatch: {p.rows} vs {rows}")
    widths = [p.cols for p in parts]
    out_val = np.concatenate([p.value for p in parts], axis=1)
    offsets = np.cumsum([0] + widths)

    def bw(g):
        for p, j0, j1 in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                _accumulate(p, g[:, j0:j1])

    return _node(out_val, tuple(parts), bw)


def slice_cols(a: Tensor, j0: int, j1: int) -> Tensor:
    if not (0 <= j0 < j1 <= a.cols):
        raise ShapeError(f"slice_cols [{j0}:{j1}] out of range for {a.shape}")
    out_val = a.value[:, j0:j1].copy()

    def bw(g):
        full = np.zeros_like(a.value)
        full[:, j0:j1] = g
        _accumulate(a, full)

    return _node(out_val, (a,), bw)


def take_row(a: Tensor, i: int) -> Tensor:
    if not (0 <= i < a.rows):
        raise ShapeError(f"row {i} out of range for {a.shape}")
    out_val = a.value[i:i + 1].copy()

    def bw(g):
        full = np.zeros_like(a.value)
        full[i:i + 1] = g
        _accumulate(a, full)

    return _node(out_val, (a,), bw)


def stack_rows(rows: Sequence[Tensor | None], cols: int) -> Tensor:
    """Stack 1 x cols tensors into a matrix; ``None`` entries become zero rows."""
    out_val = np.zeros((len(rows), cols))
    for i, r in enumerate(rows):
        if r is None:
            continue
        if r.shape != (1, cols):
            raise ShapeError(f"stack_rows expects 1x{cols} rows, got {r.shape}")
        out_val[i] = r.value[0]
    parents = tuple(r for r in rows if r is not None and r.requires_grad)

    def bw(g):
        for i, r in enumerate(rows):
            if r is not None and r.requires_grad:
                _accumulate(r, g[i:i + 1])

    return _node(out_val, parents, bw)


def gather_rows(table: Tensor, indices: np.ndarray) -> Tensor:
    """Embedding lookup: rows of ``table`` at ``indices`` (repeats allowed)."""
    idx = np.asarray(indices, dtype=np.intp)
    out_val = table.value[idx].copy()

    def bw(g):
        gt = np.zeros_like(table.value)
        np.add.at(gt, idx, g)
        _accumulate(table, gt)

    return _node(out_val, (table,), bw)


def unfold_rows(a: Tensor, width: int) -> Tensor:
    """Zero-padded sliding windows of ``width`` rows, flattened per position.

    Output row t is the concatenation of rows t-r .. t+r of ``a`` (r = half
    width), with rows outside the matrix read as zero. This turns a
    same-length 1-D convolution into a single matmul.
    """
    if width % 2 != 1 or width < 1:
        raise ConfigError(f"window width must be odd and positive, got {width}")
    r = (width - 1) // 2
    t_len, d = a.shape
    padded = np.zeros((t_len + 2 * r, d))
    padded[r:r + t_len] = a.value
    out_val = np.concatenate([padded[k:k + t_len] for k in range(width)], axis=1)

    def bw(g):
        gp = np.zeros((t_len + 2 * r, d))
        for k in range(width):
            gp[k:k + t_len] += g[:, k * d:(k + 1) * d]
        _accumulate(a, gp[r:r + t_len])

    return _node(out_val, (a,), bw)


# ---------------------------------------------------------------------------
# masked ops


def _colmask(mask, n: int) -> np.ndarray:
    m = np.asarray(mask, dtype=bool).reshape(-1)
    if m.shape[0] != n:
        raise ShapeError(f"mask length {m.shape[0]} does not match {n}")
    return m


def softmax_rows(s: Tensor, mask=None) -> Tensor:
    """Row-wise softmax over unmasked columns, max-subtracted for stability.

    Masked columns get exactly zero weight; each row's unmasked weights sum
    to 1. Raises if every column is masked.
    """
    if mask is None:
        m = np.ones(s.cols, dtype=bool)
    else:
        m = _colmask(mask, s.cols)
    if not m.any():
        raise ContractViolation("softmax_rows: all columns are masked")
    neg = np.where(m, 0.0, -np.inf)
    shifted = s.value + neg
    row_max = shifted.max(axis=1, keepdims=True)
    e = np.exp(shifted - row_max)
    e[:, ~m] = 0.0
    p = e / e.sum(axis=1, keepdims=True)

    def bw(g):
        inner = (g * p).sum(axis=1, keepdims=True)
        _accumulate(s, p * (g - inner))

    return _node(p, (s,), bw)


def pool_rows(z: Tensor, mask, kind: str) -> Tensor:
    """Reduce unmasked rows to a single 1 x cols vector (mean, max or sum)."""
    m = _colmask(mask, z.rows)
    if not m.any():
        raise ContractViolation("pool_rows: all rows are masked")
    idx = np.flatnonzero(m)
    sel = z.value[idx]
    kind = kind.lower()
    if kind == "mean":
        out_val = sel.mean(axis=0, keepdims=True)

        def bw(g):
            gz = np.zeros_like(z.value)
            gz[idx] = g / len(idx)
            _accumulate(z, gz)
    elif kind == "sum":
        out_val = sel.sum(axis=0, keepdims=True)

        def bw(g):
            gz = np.zeros_like(z.value)
            gz[idx] = g
            _accumulate(z, gz)
    elif kind == "max":
        arg = sel.argmax(axis=0)
        out_val = sel[arg, np.arange(z.cols)].reshape(1, -1)

        def bw(g):
            gz = np.zeros_like(z.value)
            gz[idx[arg], np.arange(z.cols)] += g[0]
            _accumulate(z, gz)
    else:
        raise ConfigError(f"unknown pooling kind {kind!r} (expected mean, max or sum)")
    return _node(out_val, (z,), bw)


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout: zero entries with probability p, scale the rest by 1/(1-p).

    Identity (the same node, bit-exact) when not training or p == 0.
    """
    if not (0.0 <= p < 1.0):
        raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ConfigError("dropout in training mode requires an rng")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return mul_array(x, keep)


# ---------------------------------------------------------------------------
# loss

_BCE_CLAMP = 1e-7


def weighted_bce(p: float, label: int, pos_weight: float = 1.0) -> float:
    """Class-weighted binary cross-entropy on a probability.

    p is clamped to [1e-7, 1 - 1e-7] before the log, so the result is always
    finite. Positive examples are scaled by ``pos_weight``.
    """
    pc = min(max(p, _BCE_CLAMP), 1.0 - _BCE_CLAMP)
    if label:
        return -pos_weight * np.log(pc)
    return -np.log(1.0 - pc)


def weighted_bce_loss(p: Tensor, label: int, pos_weight: float = 1.0) -> Tensor:
    """Graph node for weighted_bce; gradient is zero in the clamped region."""
    if p.value.size != 1:
        raise ShapeError("weighted_bce_loss expects a scalar probability")
    v = p.value[0, 0]
    pc = min(max(v, _BCE_CLAMP), 1.0 - _BCE_CLAMP)
    out_val = np.array([[-pos_weight * np.log(pc) if label else -np.log(1.0 - pc)]])
    clamped = not (_BCE_CLAMP < v < 1.0 - _BCE_CLAMP)

    def bw(g):
        if clamped:
            return
        d = -pos_weight / pc if label else 1.0 / (1.0 - pc)
        _accumulate(p, g * d)

    return _node(out_val, (p,), bw)
