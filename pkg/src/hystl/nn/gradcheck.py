"""Central finite-difference check of analytic gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numeric_grad(fn: Callable[[], Tensor], x: Tensor, eps: float = 1e-6) -> np.ndarray:
    """d fn / d x by central differences, perturbing ``x.data`` in place."""
    g = np.zeros_like(x.data)
    it = np.nditer(x.data, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x.data[i]
        x.data[i] = old + eps
        up = fn().item()
        x.data[i] = old - eps
        down = fn().item()
        x.data[i] = old
        g[i] = (up - down) / (2.0 * eps)
    return g


def gradcheck(fn: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = 1e-6) -> float:
    """Relative error between analytic and numeric gradients over ``inputs``.

    ``fn`` must rebuild the scalar output from the current ``inputs`` on each
    call. The error is ||g_a - g_n|| / max(||g_a||, ||g_n||, 1e-8) with all
    input gradients concatenated; measuring per input instead would blow up
    finite-difference noise on inputs whose true gradient is identically
    zero (a softmax shift, for instance).
    """
    for x in inputs:
        x.grad = None
    fn().backward()
    analytic = [np.zeros_like(x.data) if x.grad is None else x.grad.copy() for x in inputs]
    numeric = [numeric_grad(fn, x, eps) for x in inputs]
    a = np.concatenate([g.ravel() for g in analytic])
    n = np.concatenate([g.ravel() for g in numeric])
    denom = max(np.linalg.norm(a), np.linalg.norm(n), 1e-8)
    return float(np.linalg.norm(a - n) / denom)
