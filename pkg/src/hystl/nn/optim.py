from __future__ import annotations

import json
from pathlib import Path
from typing import Iterator

import numpy as np

from .tensor import Tensor


class ParamStore:
    """Named trainable tensors plus the Adam moments that belong to them."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self._params[name] = t
        self.m[name] = np.zeros_like(t.data)
        self.v[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def zero_grad(self) -> None:
        for p in self._params.values():
            if p.requires_grad:
                p.grad = np.zeros_like(p.data)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self._params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        unknown = set(state) - set(self._params)
        missing = set(self._params) - set(state)
        if unknown or missing:
            raise KeyError(f"state mismatch: unknown={sorted(unknown)} missing={sorted(missing)}")
        for k, arr in state.items():
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != self._params[k].shape:
                raise ValueError(f"{k}: shape {arr.shape} != {self._params[k].shape}")
            self._params[k].data[...] = arr

    def grad_norms(self) -> dict[str, float]:
        return {k: float(np.linalg.norm(p.grad)) if p.grad is not None else float("nan")
                for k, p in self._params.items()}

    def param_norms(self) -> dict[str, float]:
        return {k: float(np.linalg.norm(p.data)) for k, p in self._params.items()}


def adam_step(store: ParamStore, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """Bias-corrected Adam update of every trainable parameter; grads are zeroed after."""
    trainable = [(name, p) for name, p in store.items() if p.requires_grad]
    for name, p in trainable:
        if p.grad is None:
            raise ValueError(f"adam_step: parameter {name!r} has no gradient")
    store.step_count += 1
    t = store.step_count
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, p in trainable:
        g = p.grad
        m, v = store.m[name], store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        p.grad = np.zeros_like(p.data)


# checkpoint format: params.json (names, shapes, step) + params.bin (<f8, manifest order)

def save_params(store: ParamStore, directory: str | Path, extra: dict | None = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = store.names()
    manifest = {
        "names": names,
        "shapes": [list(store[n].shape) for n in names],
        "optimizer_step": store.step_count,
        "dtype": "<f8",
    }
    if extra:
        manifest.update(extra)
    blob = b"".join(np.ascontiguousarray(store[n].data, dtype="<f8").tobytes() for n in names)
    (directory / "params.bin").write_bytes(blob)
    (directory / "params.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_params(directory: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    directory = Path(directory)
    manifest = json.loads((directory / "params.json").read_text())
    flat = np.frombuffer((directory / "params.bin").read_bytes(), dtype="<f8")
    expected = sum(int(np.prod(s)) for s in manifest["shapes"])
    if flat.size != expected:
        raise ValueError(f"params.bin holds {flat.size} values, manifest expects {expected}")
    out, offset = {}, 0
    for name, shape in zip(manifest["names"], manifest["shapes"]):
        n = int(np.prod(shape))
        out[name] = flat[offset:offset + n].reshape(shape).astype(np.float64)
        offset += n
    return out, manifest
