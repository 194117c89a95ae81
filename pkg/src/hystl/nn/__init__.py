from .layers import dense, gcn_layer, glorot_uniform, gru_cell, init_gru
from .gradcheck import gradcheck, numeric_grad
from .optim import ParamStore, adam_step, load_params, save_params
from .tensor import (
    GraphConsumedError,
    NonFiniteError,
    ShapeError,
    Tensor,
    add,
    as_tensor,
    concat,
    getitem,
    matmul,
    mse,
    mul,
    no_grad,
    neg,
    reduce_mean,
    reduce_sum,
    relu,
    reshape,
    sigmoid,
    softmax,
    softplus,
    stack,
    sub,
    tanh,
)

__all__ = [
    "adam_step",
    "add",
    "as_tensor",
    "concat",
    "dense",
    "gcn_layer",
    "getitem",
    "glorot_uniform",
    "gradcheck",
    "GraphConsumedError",
    "gru_cell",
    "init_gru",
    "load_params",
    "matmul",
    "mse",
    "mul",
    "neg",
    "no_grad",
    "NonFiniteError",
    "numeric_grad",
    "ParamStore",
    "reduce_mean",
    "reduce_sum",
    "relu",
    "reshape",
    "save_params",
    "ShapeError",
    "sigmoid",
    "softmax",
    "softplus",
    "stack",
    "sub",
    "tanh",
    "Tensor",
]
