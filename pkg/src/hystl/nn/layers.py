"""Dense, graph-convolution and GRU building blocks on top of ``Tensor``."""
from __future__ import annotations

from typing import Mapping

import numpy as np

from .tensor import ShapeError, Tensor, as_tensor, matmul, mul, sigmoid, tanh

GRU_PARAM_NAMES = ("W_z", "U_z", "b_z", "W_r", "U_r", "b_r", "W_h", "U_h", "b_h")


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def dense(x, W, b=None) -> Tensor:
    out = matmul(x, W)
    return out if b is None else out + b


def gcn_layer(A_norm, X, W) -> Tensor:
    """Graph convolution ``A_norm @ X @ W`` without bias or activation.

    ``X`` may carry leading batch dimensions; ``A_norm`` is shared.
    """
    A_norm, X, W = as_tensor(A_norm), as_tensor(X), as_tensor(W)
    R = A_norm.shape[0]
    if A_norm.ndim != 2 or A_norm.shape[1] != R or X.ndim < 2 or X.shape[-2] != R:
        raise ShapeError(f"gcn_layer: adjacency {A_norm.shape} incompatible with features {X.shape}")
    if W.ndim != 2 or W.shape[0] != X.shape[-1]:
        raise ShapeError(f"gcn_layer: weight {W.shape} incompatible with features {X.shape}")
    return matmul(A_norm, matmul(X, W))


def gru_cell(x, h_prev, params: Mapping[str, Tensor]) -> Tensor:
    """One GRU update with the standard gating form.

    z = sigma(x W_z + h U_z + b_z), r = sigma(x W_r + h U_r + b_r),
    h~ = tanh(x W_h + (r * h) U_h + b_h), h_t = z * h + (1 - z) * h~.
    """
    x, h_prev = as_tensor(x), as_tensor(h_prev)
    missing = [k for k in GRU_PARAM_NAMES if k not in params]
    if missing:
        raise KeyError(f"gru_cell: missing parameters {missing}")
    H = params["U_z"].shape[0]
    if h_prev.shape[-1] != H or x.shape[-1] != params["W_z"].shape[0]:
        raise ShapeError(
            f"gru_cell: input {x.shape} / hidden {h_prev.shape} incompatible with "
            f"W {params['W_z'].shape}, U {params['U_z'].shape}"
        )
    z = sigmoid(matmul(x, params["W_z"]) + matmul(h_prev, params["U_z"]) + params["b_z"])
    r = sigmoid(matmul(x, params["W_r"]) + matmul(h_prev, params["U_r"]) + params["b_r"])
    cand = tanh(matmul(x, params["W_h"]) + matmul(mul(r, h_prev), params["U_h"]) + params["b_h"])
    return mul(z, h_prev) + mul(1.0 - z, cand)


def init_gru(rng: np.random.Generator, in_dim: int, hidden: int) -> dict[str, np.ndarray]:
    out = {}
    for gate in ("z", "r", "h"):
        out[f"W_{gate}"] = glorot_uniform(rng, in_dim, hidden)
        out[f"U_{gate}"] = glorot_uniform(rng, hidden, hidden)
        out[f"b_{gate}"] = np.zeros(hidden)
    return out
