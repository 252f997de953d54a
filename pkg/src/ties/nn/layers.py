"""Layer modules: affine, MLP, LSTM / biLSTM, 1-D conv stack, self-attention.

Layers own their ``Parameter`` tensors and build graph nodes in ``forward``.
All forward passes are deterministic; randomness enters only through the rng
handed to the initializer.
"""

from __future__ import annotations

from typing import Iterator, Sequence

import numpy as np

from ties.errors import ConfigError, ShapeError
from ties.nn.tensor import (
    Parameter,
    Tensor,
    add,
    concat_cols,
    matmul,
    matmul_nt,
    mul,
    mul_array,
    relu,
    scale,
    sigmoid,
    slice_cols,
    softmax_rows,
    stack_rows,
    take_row,
    tanh,
    unfold_rows,
)


class Module:
    """Minimal container: collects Parameters from attributes and sub-modules."""

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, val in self.__dict__.items():
            path = f"{prefix}{key}"
            if isinstance(val, Parameter):
                yield path, val
            elif isinstance(val, Module):
                yield from val.named_parameters(path + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Parameter):
                        yield f"{path}.{i}", item
                    elif isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


def uniform_init(rng: np.random.Generator, rows: int, cols: int,
                 fan_in: int | None = None) -> np.ndarray:
    """Weights uniform in +-1/sqrt(fan_in); fan_in defaults to the row count."""
    bound = 1.0 / np.sqrt(fan_in if fan_in is not None else rows)
    return rng.uniform(-bound, bound, size=(rows, cols))


def affine(x: Tensor, weight: Parameter, bias: Parameter) -> Tensor:
    """x @ W + bias, bias broadcast over rows."""
    if x.cols != weight.rows:
        raise ShapeError(f"affine: input {x.shape} does not conform to weight {weight.shape}")
    return add(matmul(x, weight), bias)


class Affine(Module):

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        self.weight = Parameter(uniform_init(rng, in_dim, out_dim))
        self.bias = Parameter(np.zeros((1, out_dim)))

    def forward(self, x: Tensor) -> Tensor:
        return affine(x, self.weight, self.bias)


class MLP(Module):
    """Chained affine + ReLU; the last layer is linear.

    ``dims`` is [in, hidden..., out]; with two entries this is a plain affine.
    """

    def __init__(self, dims: Sequence[int], rng: np.random.Generator):
        if len(dims) < 2:
            raise ConfigError(f"mlp needs at least [in, out] dims, got {list(dims)}")
        self.layers = [Affine(a, b, rng) for a, b in zip(dims[:-1], dims[1:])]

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.layers[:-1]:
            x = relu(layer.forward(x))
        return self.layers[-1].forward(x)


class LSTMCell(Module):
    """Single LSTM cell with gate layout [input | forget | candidate | output]."""

    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator):
        self.in_dim = in_dim
        self.hidden = hidden
        self.w_x = Parameter(uniform_init(rng, in_dim, 4 * hidden))
        self.w_h = Parameter(uniform_init(rng, hidden, 4 * hidden, fan_in=hidden))
        self.bias = Parameter(np.zeros((1, 4 * hidden)))

    def step(self, x_t: Tensor, h_prev: Tensor, c_prev: Tensor) -> tuple[Tensor, Tensor]:
        if x_t.shape != (1, self.in_dim):
            raise ShapeError(f"lstm step input {x_t.shape}, expected (1, {self.in_dim})")
        k = self.hidden
        gates = add(add(matmul(x_t, self.w_x), matmul(h_prev, self.w_h)), self.bias)
        i = sigmoid(slice_cols(gates, 0, k))
        f = sigmoid(slice_cols(gates, k, 2 * k))
        g = tanh(slice_cols(gates, 2 * k, 3 * k))
        o = sigmoid(slice_cols(gates, 3 * k, 4 * k))
        c = add(mul(f, c_prev), mul(i, g))
        h = mul(o, tanh(c))
        return h, c


def lstm_cell(x_t: Tensor, h_prev: Tensor, c_prev: Tensor,
              cell: LSTMCell) -> tuple[Tensor, Tensor]:
    return cell.step(x_t, h_prev, c_prev)


class BiLSTM(Module):
    """Stacked bidirectional LSTM over the unmasked rows of a sequence.

    Hidden size must be even: each direction gets hidden/2 channels and the
    two scans are concatenated per timestep, so the output is T x hidden.
    Masked rows come out as zero and are never fed to the recurrence.
    """

    def __init__(self, in_dim: int, hidden: int, layers: int, rng: np.random.Generator):
        if hidden % 2 != 0:
            raise ConfigError(f"bilstm hidden size must be even, got {hidden}")
        if layers not in (1, 2):
            raise ConfigError(f"bilstm supports 1 or 2 layers, got {layers}")
        self.in_dim = in_dim
        self.hidden = hidden
        self.cells = []
        k = hidden // 2
        for layer in range(layers):
            d = in_dim if layer == 0 else hidden
            self.cells.append(LSTMCell(d, k, rng))  # forward direction
            self.cells.append(LSTMCell(d, k, rng))  # backward direction

    def forward(self, x: Tensor, mask) -> Tensor:
        m = np.asarray(mask, dtype=bool).reshape(-1)
        if m.shape[0] != x.rows:
            raise ShapeError(f"mask length {m.shape[0]} does not match {x.rows} rows")
        idx = np.flatnonzero(m)
        t_len = x.rows
        k = self.hidden // 2
        current = x
        for layer in range(len(self.cells) // 2):
            fwd_cell = self.cells[2 * layer]
            bwd_cell = self.cells[2 * layer + 1]
            out_f: dict[int, Tensor] = {}
            out_b: dict[int, Tensor] = {}
            h = Tensor(np.zeros((1, k)))
            c = Tensor(np.zeros((1, k)))
            for t in idx:
                h, c = fwd_cell.step(take_row(current, int(t)), h, c)
                out_f[int(t)] = h
            h = Tensor(np.zeros((1, k)))
            c = Tensor(np.zeros((1, k)))
            for t in idx[::-1]:
                h, c = bwd_cell.step(take_row(current, int(t)), h, c)
                out_b[int(t)] = h
            rows: list[Tensor | None] = [
                concat_cols([out_f[t], out_b[t]]) if t in out_f else None
                for t in range(t_len)
            ]
            current = stack_rows(rows, self.hidden)
        return current


class ConvStack(Module):
    """Stack of same-length 1-D convolutions over sequence rows, ReLU after each.

    Stride is fixed at 1 and the window width must be odd; (width-1)/2 zero
    rows are implied on both ends. Kernels are stored as (width * in_dim) x
    channels matrices whose rows are ordered by (tap offset -r..+r, input
    channel), matching ``unfold_rows``.
    """

    def __init__(self, in_dim: int, channels: int, layers: int, width: int,
                 rng: np.random.Generator):
        if width % 2 != 1:
            raise ConfigError(f"conv width must be odd, got {width}")
        if layers < 1:
            raise ConfigError(f"conv stack needs at least one layer, got {layers}")
        self.width = width
        self.kernels = []
        self.biases = []
        for layer in range(layers):
            d = in_dim if layer == 0 else channels
            self.kernels.append(Parameter(uniform_init(rng, width * d, channels)))
            self.biases.append(Parameter(np.zeros((1, channels))))

    def forward(self, x: Tensor) -> Tensor:
        for kernel, bias in zip(self.kernels, self.biases):
            x = relu(affine(unfold_rows(x, self.width), kernel, bias))
        return x


class Attention(Module):
    """Single-head scaled dot-product self-attention with learned Q/K/V maps.

    Masked positions are excluded as keys/values (zero weight) and produce
    zero output rows.
    """

    def __init__(self, hidden: int, rng: np.random.Generator):
        self.hidden = hidden
        self.w_q = Parameter(uniform_init(rng, hidden, hidden))
        self.w_k = Parameter(uniform_init(rng, hidden, hidden))
        self.w_v = Parameter(uniform_init(rng, hidden, hidden))

    def forward(self, h: Tensor, mask) -> Tensor:
        if h.cols != self.hidden:
            raise ShapeError(f"attention expects width {self.hidden}, got {h.shape}")
        m = np.asarray(mask, dtype=bool).reshape(-1)
        q = matmul(h, self.w_q)
        k = matmul(h, self.w_k)
        v = matmul(h, self.w_v)
        scores = scale(matmul_nt(q, k), 1.0 / np.sqrt(self.hidden))
        weights = softmax_rows(scores, m)
        z = matmul(weights, v)
        return mul_array(z, m.astype(np.float64).reshape(-1, 1))

    def weights_for(self, h: Tensor, mask) -> np.ndarray:
        """Attention weight matrix only (for inspection and tests)."""
        m = np.asarray(mask, dtype=bool).reshape(-1)
        q = matmul(h, self.w_q)
        k = matmul(h, self.w_k)
        scores = scale(matmul_nt(q, k), 1.0 / np.sqrt(self.hidden))
        return softmax_rows(scores, m).value
