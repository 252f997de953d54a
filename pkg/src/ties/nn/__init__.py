"""Differentiable-computation substrate: tensors, layers, losses, optimizer."""

from ties.nn.gradcheck import GradCheckConfig, grad_check
from ties.nn.layers import (
    Affine,
    Attention,
    BiLSTM,
    ConvStack,
    LSTMCell,
    MLP,
    Module,
    affine,
    lstm_cell,
    uniform_init,
)
from ties.nn.optim import adam_step, clip_gradients
from ties.nn.tensor import (
    Parameter,
    Tensor,
    add,
    concat_cols,
    dropout,
    gather_rows,
    matmul,
    matmul_nt,
    mul,
    mul_array,
    pool_rows,
    relu,
    scale,
    sigmoid,
    slice_cols,
    softmax_rows,
    stack_rows,
    sub,
    sum_all,
    take_row,
    tanh,
    unfold_rows,
    weighted_bce,
    weighted_bce_loss,
)

__all__ = [
    "GradCheckConfig",
    "grad_check",
    "Affine",
    "Attention",
    "BiLSTM",
    "ConvStack",
    "LSTMCell",
    "MLP",
    "Module",
    "affine",
    "lstm_cell",
    "uniform_init",
    "adam_step",
    "clip_gradients",
    "Parameter",
    "Tensor",
    "add",
    "concat_cols",
    "dropout",
    "gather_rows",
    "matmul",
    "matmul_nt",
    "mul",
    "mul_array",
    "pool_rows",
    "relu",
    "scale",
    "sigmoid",
    "slice_cols",
    "softmax_rows",
    "stack_rows",
    "sub",
    "sum_all",
    "take_row",
    "tanh",
    "unfold_rows",
    "weighted_bce",
    "weighted_bce_loss",
]
