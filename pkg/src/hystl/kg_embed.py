"""Metapath-guided random walks and heterogeneous skip-gram (metapath2vec++)."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .crimekg import ENTITY_TYPES, KnowledgeGraph

logger = logging.getLogger(__name__)

CRIME_LEGAL_CRIME = ("crime_type", "legal_code", "crime_type")
CRIME_OBJECT_CRIME = ("crime_type", "object", "crime_type")
DEFAULT_METAPATHS = (CRIME_LEGAL_CRIME, CRIME_OBJECT_CRIME)


@dataclass(frozen=True)
class Metapath:
    type_sequence: tuple[str, ...]

    def __post_init__(self):
        seq = tuple(self.type_sequence)
        object.__setattr__(self, "type_sequence", seq)
        if len(seq) < 3 or len(seq) % 2 == 0:
            raise ValueError(f"metapath must have odd length >= 3, got {seq}")
        if seq[0] != "crime_type" or seq[-1] != "crime_type":
            raise ValueError(f"metapath must start and end with crime_type, got {seq}")
        unknown = set(seq) - set(ENTITY_TYPES)
        if unknown:
            raise ValueError(f"metapath uses unknown entity types {sorted(unknown)}")

    @property
    def cycle(self) -> int:
        return len(self.type_sequence) - 1

    def type_at(self, position: int) -> str:
        return self.type_sequence[position % self.cycle]


@dataclass
class WalkCorpus:
    walks: list[list[int]]
    metapaths: list[Metapath]
    seed: int


def walk_is_valid(walk: Sequence[int], metapath: Metapath, kg: KnowledgeGraph,
                  neighbours: list[set[int]] | None = None) -> bool:
    types = kg.types()
    if neighbours is None:
        neighbours = [set(n) for n in kg.neighbours()]
    for i, node in enumerate(walk):
        if types[node] != metapath.type_at(i):
            return False
        if i and node not in neighbours[walk[i - 1]]:
            return False
    return True


def generate_walks(kg: KnowledgeGraph, metapath: Metapath | Sequence[str], walks_per_node: int = 40,
                   walk_length: int = 20, seed: int = 0) -> WalkCorpus:
    """Metapath-constrained uniform random walks from every crime-type node.

    Each start node draws from its own RNG stream seeded by (seed, node id).
    A walk stops early when no neighbour has the required next type.
    """
    if not isinstance(metapath, Metapath):
        metapath = Metapath(tuple(metapath))
    if walk_length < len(metapath.type_sequence):
        raise ValueError(f"walk_length {walk_length} shorter than metapath {metapath.type_sequence}")
    types = kg.types()
    nbrs = kg.neighbours()
    typed = [{t: [j for j in nb if types[j] == t] for t in set(metapath.type_sequence)} for nb in nbrs]
    walks: list[list[int]] = []
    starts = [e.id for e in kg.entities if e.entity_type == metapath.type_sequence[0]]
    for start in starts:
        rng = np.random.default_rng([seed, start])
        for _ in range(walks_per_node):
            walk = [start]
            for pos in range(1, walk_length):
                options = typed[walk[-1]][metapath.type_at(pos)]
                if not options:
                    break
                walk.append(options[int(rng.integers(len(options)))])
            walks.append(walk)
    return WalkCorpus(walks, [metapath], seed)


def generate_corpus(kg: KnowledgeGraph, metapaths: Sequence = DEFAULT_METAPATHS, walks_per_node: int = 40,
                    walk_length: int = 20, seed: int = 0) -> WalkCorpus:
    walks, used = [], []
    for k, mp in enumerate(metapaths):
        corpus = generate_walks(kg, mp, walks_per_node, walk_length, seed + 7919 * k)
        walks.extend(corpus.walks)
        used.extend(corpus.metapaths)
    return WalkCorpus(walks, used, seed)


# -- skip-gram ---------------------------------------------------------------

def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def _sigmoid(x):
    return np.exp(_log_sigmoid(x))


def skipgram_objective(x_u: np.ndarray, c_v: np.ndarray, c_neg: np.ndarray) -> float:
    """log s(x_u . c_v) + sum_k log s(-x_u . c_k); ``c_neg`` is (k, d)."""
    return float(_log_sigmoid(x_u @ c_v) + _log_sigmoid(-(c_neg @ x_u)).sum())


def skipgram_gradients(x_u: np.ndarray, c_v: np.ndarray, c_neg: np.ndarray):
    """Gradients of ``skipgram_objective`` w.r.t. x_u, c_v and each negative row."""
    g_pos = 1.0 - _sigmoid(x_u @ c_v)
    g_neg = -_sigmoid(c_neg @ x_u)
    return g_pos * c_v + g_neg @ c_neg, g_pos * x_u, g_neg[:, None] * x_u[None, :]


@dataclass
class EmbeddingMatrix:
    Z: np.ndarray
    trainable: bool = True
    meta: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return self.Z.shape[1]

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "embeddings.bin").write_bytes(np.ascontiguousarray(self.Z, dtype="<f8").tobytes())
        manifest = {"d": self.d, "n_entities": int(self.Z.shape[0]), "trainable": self.trainable,
                    "dtype": "<f8", **self.meta}
        (directory / "embeddings.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, directory: str | Path) -> "EmbeddingMatrix":
        directory = Path(directory)
        manifest = json.loads((directory / "embeddings.json").read_text())
        flat = np.frombuffer((directory / "embeddings.bin").read_bytes(), dtype="<f8")
        n, d = manifest.pop("n_entities"), manifest.pop("d")
        if flat.size != n * d:
            raise ValueError(f"embeddings.bin holds {flat.size} values, manifest says {n}x{d}")
        manifest.pop("dtype", None)
        trainable = manifest.pop("trainable", True)
        return cls(flat.reshape(n, d).copy(), trainable, manifest)


def embedding_of(Z, entity_id: int):
    """Row ``entity_id`` of an embedding table.

    For an ``EmbeddingMatrix`` or array this is a writable view of the row;
    for an autodiff ``Tensor`` it is a graph slice whose gradient flows back
    into the table.
    """
    from .nn import Tensor, getitem

    if isinstance(Z, Tensor):
        if not 0 <= entity_id < Z.shape[0]:
            raise KeyError(f"unknown entity id {entity_id}")
        return getitem(Z, entity_id)
    table = Z.Z if isinstance(Z, EmbeddingMatrix) else Z
    if not 0 <= entity_id < table.shape[0]:
        raise KeyError(f"unknown entity id {entity_id}")
    return table[entity_id]


class _TypedNegativeSampler:
    """Unigram^0.75 sampler restricted to the context node's entity type."""

    def __init__(self, corpus: WalkCorpus, types: Sequence[str], n_entities: int):
        counts = np.zeros(n_entities)
        for walk in corpus.walks:
            np.add.at(counts, walk, 1.0)
        self.pools: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        for t in set(types):
            members = np.array([i for i in range(n_entities) if types[i] == t and counts[i] > 0], dtype=np.int64)
            if members.size == 0:
                continue
            w = counts[members] ** 0.75
            self.pools[t] = (members, np.cumsum(w / w.sum()))
        self.types = types

    def sample(self, rng: np.random.Generator, node: int, k: int) -> np.ndarray:
        members, cdf = self.pools[self.types[node]]
        idx = np.searchsorted(cdf, rng.random(k), side="right")
        return members[np.minimum(idx, members.size - 1)]


def train_skipgram(corpus: WalkCorpus, kg: KnowledgeGraph, d: int = 16, window: int = 2,
                   negatives: int = 5, epochs: int = 5, lr: float = 0.025, seed: int = 0) -> EmbeddingMatrix:
    """Skip-gram with type-restricted negative sampling over the walk corpus.

    Updates are sequential (walk order, then position), with a linearly
    decaying learning rate, so a fixed seed gives bit-identical output.
    """
    if not corpus.walks:
        raise ValueError("empty walk corpus")
    if d < 1 or window < 1:
        raise ValueError("d and window must be >= 1")
    n = len(kg.entities)
    types = kg.types()
    rng = np.random.default_rng(seed)
    X = rng.uniform(-0.5 / d, 0.5 / d, size=(n, d))
    C = np.zeros((n, d))
    sampler = _TypedNegativeSampler(corpus, types, n)
    if negatives:
        small = [t for t, (m, _) in sampler.pools.items() if m.size < negatives + 1]
        if small:
            logger.info("types %s have fewer than %d members; negatives drawn with replacement",
                        sorted(small), negatives + 1)

    total = epochs * sum(len(w) for w in corpus.walks)
    done = 0
    for _ in range(epochs):
        for walk in corpus.walks:
            L = len(walk)
            for i, u in enumerate(walk):
                alpha = lr * max(1e-4, 1.0 - done / total)
                done += 1
                ctx = [walk[j] for j in range(max(0, i - window), min(L, i + window + 1)) if j != i]
                if not ctx:
                    continue
                grad_u = np.zeros(d)
                for v in ctx:
                    if negatives:
                        neg = sampler.sample(rng, v, negatives)
                        gu, gv, gneg = skipgram_gradients(X[u], C[v], C[neg])
                        np.add.at(C, neg, alpha * gneg)
                    else:
                        gu, gv, _ = skipgram_gradients(X[u], C[v], np.zeros((0, d)))
                    C[v] += alpha * gv
                    grad_u += gu
                X[u] += alpha * grad_u
    meta = {"seed": seed, "window": window, "negatives": negatives, "epochs": epochs, "lr": lr,
            "n_walks": len(corpus.walks),
            "metapaths": sorted({"->".join(m.type_sequence) for m in corpus.metapaths})}
    return EmbeddingMatrix(X, True, meta)


def embed_kg(kg: KnowledgeGraph, d: int = 16, seed: int = 0, metapaths: Sequence = DEFAULT_METAPATHS,
             walks_per_node: int = 40, walk_length: int = 20, window: int = 2, negatives: int = 5,
             epochs: int = 5, lr: float = 0.025) -> EmbeddingMatrix:
    corpus = generate_corpus(kg, metapaths, walks_per_node, walk_length, seed)
    emb = train_skipgram(corpus, kg, d, window, negatives, epochs, lr, seed)
    emb.meta.update({"walks_per_node": walks_per_node, "walk_length": walk_length})
    return emb
