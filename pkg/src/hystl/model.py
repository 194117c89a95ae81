"""Hypernetwork-conditioned temporal GNN for per-crime-type count forecasting.

A shared GCN-GRU backbone encodes each input window. Crime-type specificity
enters only through parameters emitted by a hypernetwork from the crime
type's KG embedding: a per-channel gate on the backbone output and the bias
of the first prediction-head layer.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .nn import (
    ParamStore,
    ShapeError,
    Tensor,
    gcn_layer,
    getitem,
    glorot_uniform,
    gru_cell,
    init_gru,
    load_params,
    matmul,
    mse,
    mul,
    no_grad,
    relu,
    reshape,
    save_params,
    softmax,
    stack,
    tanh,
)
from .nn.tensor import as_tensor

VARIANTS = ("full", "no_kg", "no_hypernet")
BACKBONES = ("a3tgcn", "tgcn")
HYPER_OUT_SCALE = 0.1
# initial head-layer bias: keeps the 12 head ReLUs active while the
# backbone output is still small, so early Adam steps do not kill them
HEAD_BIAS_INIT = 1.0


@dataclass(frozen=True)
class HypernetConfig:
    in_dim: int = 16
    hidden_dims: tuple[int, ...] = (32,)
    out_partition: tuple[tuple[str, int], ...] = (("gate_weights", 32), ("head_biases", 12))

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(self.hidden_dims))
        object.__setattr__(self, "out_partition", tuple((str(k), int(v)) for k, v in self.out_partition))
        if self.in_dim < 1:
            raise ValueError("in_dim must be >= 1")
        if any(v <= 0 for _, v in self.out_partition) or any(h <= 0 for h in self.hidden_dims):
            raise ValueError("layer and partition sizes must be positive")

    @property
    def total(self) -> int:
        return sum(v for _, v in self.out_partition)

    def size(self, name: str) -> int:
        return dict(self.out_partition)[name]


@dataclass(frozen=True)
class BackboneConfig:
    in_features: int = 2
    hidden: int = 32
    T_in: int = 30
    head_hidden: int = 12
    kind: str = "a3tgcn"

    def __post_init__(self):
        if min(self.in_features, self.hidden, self.T_in, self.head_hidden) < 1:
            raise ValueError("backbone sizes must be positive")
        if self.kind not in BACKBONES:
            raise ValueError(f"unknown backbone {self.kind!r}; choose from {BACKBONES}")


@dataclass
class GeneratedParams:
    W_c: Tensor  # (H,) positive channel gate
    b_c: Tensor  # (head_hidden,) head-layer bias
    raw: Tensor = field(repr=False, default=None)


# -- stateless pieces -----------------------------------------------------------

def hypernet_forward(z_c, layers: Sequence[tuple], config: HypernetConfig) -> GeneratedParams:
    """MLP from a crime embedding to the generated gate and head bias.

    ``layers`` is a sequence of (W, b) pairs; ReLU follows every layer but
    the last. The gate slice passes through 1 + tanh so a zero output is the
    identity gate.
    """
    z = as_tensor(z_c)
    if z.shape != (config.in_dim,):
        raise ShapeError(f"hypernet_forward: embedding shape {z.shape}, expected ({config.in_dim},)")
    h = reshape(z, (1, config.in_dim))
    for k, (W, b) in enumerate(layers):
        h = matmul(h, W) + b
        if k < len(layers) - 1:
            h = relu(h)
    if h.shape != (1, config.total):
        raise ShapeError(f"hypernet_forward: output width {h.shape[1]}, partition expects {config.total}")
    raw = reshape(h, (config.total,))
    n_gate = config.size("gate_weights")
    gate = 1.0 + tanh(getitem(raw, slice(0, n_gate)))
    bias = getitem(raw, slice(n_gate, n_gate + config.size("head_biases")))
    return GeneratedParams(gate, bias, raw)


def backbone_forward(X_window, A_norm, gate, shared: Mapping[str, Tensor], z_extra=None) -> list[Tensor]:
    """GCN input transform, GRU recurrence and channel gating for each step.

    ``X_window`` is (..., T_in, R, F). ``gate`` is an (H,) tensor or None
    (identity). ``z_extra`` (d,) is broadcast-concatenated to the node
    features of every step; the input weight then has F + d rows.
    """
    X = as_tensor(X_window)
    if X.ndim < 3:
        raise ShapeError(f"backbone_forward: expected (..., T_in, R, F), got {X.shape}")
    T_in, F = X.shape[-3], X.shape[-1]
    W_in = shared["W_in"]
    if z_extra is None:
        if W_in.shape[0] != F:
            raise ShapeError(f"backbone_forward: W_in {W_in.shape} vs {F} input features")
        W_x, extra = W_in, None
    else:
        z = as_tensor(z_extra)
        if W_in.shape[0] != F + z.shape[0]:
            raise ShapeError(f"backbone_forward: W_in {W_in.shape} vs {F}+{z.shape[0]} features")
        W_x = getitem(W_in, slice(0, F))
        W_z = getitem(W_in, slice(F, None))
        # A (X_t || 1 z^T) W = A X_t W_x + (A 1)(z W_z): identical to concatenation
        rowsum = np.asarray(as_tensor(A_norm).data.sum(axis=1, keepdims=True))
        extra = mul(rowsum, matmul(reshape(z, (1, z.shape[0])), W_z))
    gru = {k[4:]: v for k, v in shared.items() if k.startswith("gru.")}
    H = gru["U_z"].shape[0]
    h = Tensor(np.zeros(X.shape[:-3] + (X.shape[-2], H)))
    out = []
    for t in range(T_in):
        x_t = X.data[..., t, :, :] if not X.requires_grad else getitem(X, (Ellipsis, t, slice(None), slice(None)))
        pre = gcn_layer(A_norm, x_t, W_x)
        if extra is not None:
            pre = pre + extra
        u = relu(pre)
        h = gru_cell(u, h, gru)
        out.append(h if gate is None else mul(h, gate))
    return out


def temporal_attention(H_seq: Sequence[Tensor], W_a, b_a) -> tuple[Tensor, Tensor]:
    """Softmax-over-time aggregation; score_t = mean_nodes(H_t W_a) + b_a."""
    if not H_seq:
        raise ShapeError("temporal_attention: empty sequence")
    W_a, b_a = as_tensor(W_a), as_tensor(b_a)
    Hdim = H_seq[0].shape[-1]
    if W_a.ndim == 1:
        W_a = reshape(W_a, (Hdim, 1))
    if W_a.shape != (Hdim, 1):
        raise ShapeError(f"temporal_attention: W_a {W_a.shape} vs hidden {Hdim}")
    Hs = stack(H_seq, axis=-3)                          # (..., T, R, H)
    scores = matmul(Hs, W_a).mean(axis=(-2, -1))        # (..., T)
    alpha = softmax(scores + reshape(b_a, ()), axis=-1)
    agg = (mul(Hs, reshape(alpha, alpha.shape + (1, 1)))).sum(axis=-3)
    return agg, alpha


def last_step(H_seq: Sequence[Tensor]) -> tuple[Tensor, Tensor]:
    """T-GCN readout: the final hidden state, i.e. one-hot attention on t = T_in."""
    last = H_seq[-1]
    alpha = np.zeros(last.shape[:-2] + (len(H_seq),))
    alpha[..., -1] = 1.0
    return last, Tensor(alpha)


def predict_head(H_agg, b_c, head: Mapping[str, Tensor]) -> Tensor:
    """dense(H -> head_hidden, bias b_c) -> ReLU -> dense(head_hidden -> 1)."""
    H_agg = as_tensor(H_agg)
    W1, W2, b2 = head["W1"], head["W2"], head["b2"]
    if H_agg.shape[-1] != W1.shape[0]:
        raise ShapeError(f"predict_head: input {H_agg.shape} vs W1 {W1.shape}")
    if as_tensor(b_c).shape != (W1.shape[1],):
        raise ShapeError(f"predict_head: bias {as_tensor(b_c).shape} vs W1 {W1.shape}")
    hidden = relu(matmul(H_agg, W1) + b_c)
    out = matmul(hidden, W2) + b2
    return reshape(out, out.shape[:-1])


def loss_crime(pred, target, reduction: str = "sum") -> Tensor:
    """Squared error summed (default) or averaged over windows, regions and types."""
    return mse(pred, target, reduction=reduction)


# -- the model ---------------------------------------------------------------

class HYSTLModel:
    """Parameter container plus forward pass for one model variant.

    ``variant``: ``full`` and ``no_kg`` share the architecture (they differ
    only in how the embedding table is initialised); ``no_hypernet`` feeds the
    embedding into the node features instead and uses a shared head bias.
    """

    def __init__(self, Z_init: np.ndarray, hyper: HypernetConfig | None = None,
                 backbone: BackboneConfig | None = None, variant: str = "full", seed: int = 0,
                 train_embeddings: bool = True):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; choose from {VARIANTS}")
        Z_init = np.asarray(Z_init, dtype=np.float64)
        self.hyper = hyper or HypernetConfig(in_dim=Z_init.shape[1])
        self.backbone = backbone or BackboneConfig()
        if Z_init.ndim != 2 or Z_init.shape[1] != self.hyper.in_dim:
            raise ShapeError(f"embedding table {Z_init.shape} does not match in_dim {self.hyper.in_dim}")
        if self.hyper.size("gate_weights") != self.backbone.hidden:
            raise ShapeError("gate width must equal backbone hidden channels")
        if self.hyper.size("head_biases") != self.backbone.head_hidden:
            raise ShapeError("generated bias width must equal head_hidden")
        self.variant = variant
        self.seed = seed
        self.train_embeddings = train_embeddings
        rng = np.random.default_rng(seed)
        p = ParamStore()
        d, F, H, Hh = self.hyper.in_dim, self.backbone.in_features, self.backbone.hidden, self.backbone.head_hidden
        p.add("kg.Z", Z_init.copy())
        in_rows = F + d if variant == "no_hypernet" else F
        p.add("backbone.W_in", glorot_uniform(rng, in_rows, H))
        for k, v in init_gru(rng, H, H).items():
            p.add(f"backbone.gru.{k}", v)
        p.add("attn.W_a", glorot_uniform(rng, H, 1))
        p.add("attn.b_a", np.zeros(1))
        p.add("head.W1", glorot_uniform(rng, H, Hh))
        p.add("head.W2", glorot_uniform(rng, Hh, 1))
        p.add("head.b2", np.zeros(1))
        if variant == "no_hypernet":
            p.add("head.b1", np.full(Hh, HEAD_BIAS_INIT))
        else:
            dims = (d,) + self.hyper.hidden_dims
            for k in range(len(dims) - 1):
                p.add(f"hyper.W{k}", glorot_uniform(rng, dims[k], dims[k + 1]))
                p.add(f"hyper.b{k}", np.zeros(dims[k + 1]))
            k = len(dims) - 1
            # small output layer: every crime type starts near gate = 1 and the shared head bias,
            # while gradients still reach the embedding rows from the first step
            p.add(f"hyper.W{k}", HYPER_OUT_SCALE * glorot_uniform(rng, dims[-1], self.hyper.total))
            b_out = np.zeros(self.hyper.total)
            n_gate = self.hyper.size("gate_weights")
            b_out[n_gate:n_gate + Hh] = HEAD_BIAS_INIT
            p.add(f"hyper.b{k}", b_out)
        if not train_embeddings:
            p["kg.Z"].requires_grad = False
        self.params = p

    # parameter groups
    def hyper_layers(self) -> list[tuple[Tensor, Tensor]]:
        n = len(self.hyper.hidden_dims) + 1
        return [(self.params[f"hyper.W{k}"], self.params[f"hyper.b{k}"]) for k in range(n)]

    def shared_backbone(self) -> dict[str, Tensor]:
        return {k[len("backbone."):]: v for k, v in self.params.items() if k.startswith("backbone.")}

    def head_params(self) -> dict[str, Tensor]:
        return {"W1": self.params["head.W1"], "W2": self.params["head.W2"], "b2": self.params["head.b2"]}

    def embedding(self, entity_id: int) -> Tensor:
        Z = self.params["kg.Z"]
        if not 0 <= entity_id < Z.shape[0]:
            raise KeyError(f"unknown entity id {entity_id}")
        return getitem(Z, entity_id)

    def generate(self, entity_id: int) -> GeneratedParams:
        return hypernet_forward(self.embedding(entity_id), self.hyper_layers(), self.hyper)

    def forward(self, X, A_norm, entity_id: int) -> tuple[Tensor, Tensor]:
        """Predictions (..., R) and attention weights (..., T_in) for one crime type."""
        z = self.embedding(entity_id)
        if self.variant == "no_hypernet":
            H_seq = backbone_forward(X, A_norm, None, self.shared_backbone(), z_extra=z)
            bias = self.params["head.b1"]
        else:
            theta = hypernet_forward(z, self.hyper_layers(), self.hyper)
            H_seq = backbone_forward(X, A_norm, theta.W_c, self.shared_backbone())
            bias = theta.b_c
        if self.backbone.kind == "tgcn":
            agg, alpha = last_step(H_seq)
        else:
            agg, alpha = temporal_attention(H_seq, self.params["attn.W_a"], self.params["attn.b_a"])
        return predict_head(agg, bias, self.head_params()), alpha

    def predict(self, X, A_norm, entity_id: int) -> np.ndarray:
        with no_grad():
            pred, _ = self.forward(X, A_norm, entity_id)
        return pred.data.copy()

    def trainable_names(self) -> list[str]:
        return [n for n, t in self.params.items() if t.requires_grad]

    # -- persistence -----------------------------------------------------------
    def manifest(self) -> dict:
        return {
            "variant": self.variant,
            "seed": self.seed,
            "train_embeddings": self.train_embeddings,
            "hypernet": {"in_dim": self.hyper.in_dim, "hidden_dims": list(self.hyper.hidden_dims),
                         "out_partition": [list(x) for x in self.hyper.out_partition]},
            "backbone": asdict(self.backbone),
            "n_entities": int(self.params["kg.Z"].shape[0]),
        }

    def save(self, directory: str | Path, crime_map: Mapping | None = None, embedding_ref: str | None = None) -> None:
        directory = Path(directory)
        save_params(self.params, directory)
        manifest = self.manifest()
        manifest["crime_type_entities"] = {str(k): int(v) for k, v in (crime_map or {}).items()}
        manifest["embedding_snapshot"] = embedding_ref
        (directory / "model_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, directory: str | Path) -> tuple["HYSTLModel", dict]:
        directory = Path(directory)
        manifest = json.loads((directory / "model_manifest.json").read_text())
        state, pmeta = load_params(directory)
        hc = manifest["hypernet"]
        hyper = HypernetConfig(hc["in_dim"], tuple(hc["hidden_dims"]), tuple(tuple(x) for x in hc["out_partition"]))
        backbone = BackboneConfig(**manifest["backbone"])
        model = cls(state["kg.Z"], hyper, backbone, manifest["variant"], manifest["seed"],
                    manifest.get("train_embeddings", True))
        model.params.load_state_dict(state)
        model.params.step_count = pmeta.get("optimizer_step", 0)
        return model, manifest
