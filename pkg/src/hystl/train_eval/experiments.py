"""Single runs, ablations, sweeps and backbone swaps on top of ``train``/``evaluate``."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from ..crimekg import KnowledgeGraph
from ..geogrid import CrimeTensor
from ..model import BACKBONES, VARIANTS, BackboneConfig, HypernetConfig, HYSTLModel
from ..stgraph import SpatialGraph, make_recipe
from .synth import synth_cities
from .tasks import TaskSpec, build_tasks
from .trainer import RunConfig, evaluate, train

logger = logging.getLogger(__name__)

METRIC_FIELDS = ("task", "city", "crime_type", "MAE", "MAPE", "n_days", "mape_excluded_entries",
                 "mape_excluded_days")


def config_hash(cfg: Mapping) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# -- embedding initialisations ------------------------------------------------

def gaussian_like(Z: np.ndarray, seed: int) -> np.ndarray:
    """Seeded Gaussian table with the per-dimension mean and std of ``Z``."""
    Z = np.asarray(Z, dtype=np.float64)
    rng = np.random.default_rng([seed, 0x6E6F6B67])
    return Z.mean(axis=0) + rng.standard_normal(Z.shape) * Z.std(axis=0)


def load_word_vectors(path: str | Path) -> dict[str, np.ndarray]:
    """Whitespace-separated ``token v1 ... vd`` lines (GloVe text format)."""
    vectors: dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            parts = line.rstrip().split(" ")
            if len(parts) < 2:
                continue
            vec = np.array(parts[1:], dtype=np.float64)
            if dim is None:
                dim = vec.size
            elif vec.size != dim:
                raise ValueError(f"{path}:{lineno}: expected {dim} values, got {vec.size}")
            vectors[parts[0].lower()] = vec
    return vectors


def word_vector_init(kg: KnowledgeGraph, vectors: Mapping[str, np.ndarray], d: int, seed: int) -> np.ndarray:
    """Entity rows = mean of the label's token vectors; labels with no known token get Gaussian rows."""
    dims = {v.size for v in vectors.values()}
    if dims != {d}:
        raise ValueError(f"word vectors have dimension {sorted(dims)}, model expects {d}")
    known = np.stack(list(vectors.values()))
    rng = np.random.default_rng([seed, 0x676C6F76])
    Z = np.empty((len(kg.entities), d))
    misses = 0
    for e in kg.entities:
        toks = [vectors[t] for t in e.label.lower().replace("-", " ").split() if t in vectors]
        if toks:
            Z[e.id] = np.mean(toks, axis=0)
        else:
            Z[e.id] = known.mean(axis=0) + rng.standard_normal(d) * known.std(axis=0)
            misses += 1
    if misses:
        logger.info("word-vector init: %d of %d entity labels had no known token", misses, len(kg.entities))
    return Z


def variant_embeddings(variant: str, Z_kg: np.ndarray, seed: int, no_kg_init: np.ndarray | None = None) -> np.ndarray:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    if variant != "no_kg":
        return Z_kg
    Z = gaussian_like(Z_kg, seed) if no_kg_init is None else np.asarray(no_kg_init, dtype=np.float64)
    if Z.shape != Z_kg.shape:
        raise ValueError(f"no_kg init shape {Z.shape} does not match embedding table {Z_kg.shape}")
    return Z


# -- single run ----------------------------------------------------------------

@dataclass
class RunResult:
    config: RunConfig
    metrics: dict[str, dict]
    best_epoch: int
    best_val_mae: float
    runtime_s: float
    log: list[dict] = field(repr=False, default_factory=list)
    model: HYSTLModel | None = field(repr=False, default=None)

    @property
    def mean_mae(self) -> float:
        return float(np.mean([m["MAE"] for m in self.metrics.values()]))

    @property
    def mean_mape(self) -> float:
        vals = [m["MAPE"] for m in self.metrics.values() if np.isfinite(m["MAPE"])]
        return float(np.mean(vals)) if vals else float("nan")

    def metrics_document(self) -> dict:
        cfg = self.config.to_dict()
        return {
            "seed": self.config.seed,
            "config_hash": config_hash(cfg),
            "config": cfg,
            "best_epoch": self.best_epoch,
            "best_val_mae": self.best_val_mae,
            "mean_MAE": self.mean_mae,
            "mean_MAPE": self.mean_mape,
            "tasks": self.metrics,
        }


def make_model(Z: np.ndarray, config: RunConfig, n_features: int) -> HYSTLModel:
    d = Z.shape[1]
    if d != config.embed_dim:
        raise ValueError(f"embedding dimension {d} does not match embed_dim={config.embed_dim}")
    backbone = BackboneConfig(in_features=n_features, T_in=config.T_in, kind=config.backbone)
    return HYSTLModel(Z, HypernetConfig(in_dim=d), backbone, config.ablation, config.seed)


def prepare_tasks(cities: Sequence[tuple[CrimeTensor, SpatialGraph]], entity_map: Mapping[str, int],
                  config: RunConfig) -> list[TaskSpec]:
    return build_tasks(cities, entity_map, config.T_in, config.feature_recipe, config.val_days)


def run_experiment(cities: Sequence[tuple[CrimeTensor, SpatialGraph]], entity_map: Mapping[str, int],
                   Z: np.ndarray, config: RunConfig, split: str = "test",
                   log_file=None, tasks: list[TaskSpec] | None = None) -> RunResult:
    """Train one model from ``Z`` and evaluate it on ``split``."""
    start = time.perf_counter()
    tasks = tasks if tasks is not None else prepare_tasks(cities, entity_map, config)
    model = make_model(Z, config, make_recipe(config.feature_recipe).n_features)
    result = train(model, tasks, config, log_file=log_file)
    metrics = evaluate(model, tasks, split)
    return RunResult(config, metrics, result.best_epoch, result.best_val_mae,
                     time.perf_counter() - start, result.log, model)


# -- outputs -----------------------------------------------------------------

def metrics_rows(metrics: Mapping[str, dict], **extra) -> list[dict]:
    rows = []
    for name in sorted(metrics):
        m = metrics[name]
        row = {"task": name, **{k: m[k] for k in METRIC_FIELDS[1:]}}
        row.update(extra)
        rows.append(row)
    return rows


def write_csv(path: str | Path, rows: Sequence[Mapping], fields: Sequence[str] | None = None) -> None:
    fields = list(fields or (rows[0].keys() if rows else []))
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(r.get(k)) for k in fields})
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else v


def write_metrics(directory: str | Path, result: RunResult, variant: str | None = None) -> None:
    """``metrics.json`` plus a flat ``metrics.csv``; both are free of timing data."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    doc = result.metrics_document()
    (directory / "metrics.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    rows = metrics_rows(result.metrics, variant=variant or result.config.ablation,
                        backbone=result.config.backbone, seed=result.config.seed)
    write_csv(directory / "metrics.csv", rows,
              ("variant", "backbone", "seed") + METRIC_FIELDS)


# -- comparisons ------------------------------------------------------------

def ablate(cities, entity_map, Z_kg: np.ndarray, config: RunConfig, variants: Sequence[str] = VARIANTS,
           no_kg_init: np.ndarray | None = None) -> dict[str, RunResult]:
    """Every variant on the same data, seed and tasks."""
    tasks = prepare_tasks(cities, entity_map, config)
    out = {}
    for v in variants:
        Z = variant_embeddings(v, Z_kg, config.seed, no_kg_init)
        out[v] = run_experiment(cities, entity_map, Z, replace(config, ablation=v), tasks=tasks)
    return out


def swap_backbone(cities, entity_map, Z: np.ndarray, config: RunConfig,
                  backbones: Sequence[str] = BACKBONES) -> dict[str, RunResult]:
    for b in backbones:
        if b not in BACKBONES:
            raise ValueError(f"unknown backbone {b!r}; choose from {BACKBONES}")
    tasks = prepare_tasks(cities, entity_map, config)
    return {b: run_experiment(cities, entity_map, Z, replace(config, backbone=b), tasks=tasks)
            for b in backbones}


def comparison_rows(results: Mapping[str, RunResult], key: str) -> list[dict]:
    """One row per compared setting with mean MAE/MAPE and the per-task values."""
    rows = []
    for name, res in results.items():
        row = {key: name, "MAE": res.mean_mae, "MAPE": res.mean_mape, "seed": res.config.seed}
        for task, m in sorted(res.metrics.items()):
            row[f"MAE[{task}]"] = m["MAE"]
            row[f"MAPE[{task}]"] = m["MAPE"]
        rows.append(row)
    return rows


SWEEP_DIMS = (4, 8, 16, 32, 64, 128, 256)
SWEEP_FIELDS = ("embed_dim", "lr", "MAE", "MAPE", "runtime_s", "status")


def sweep(cities, entity_map, embed: Callable[[int], np.ndarray], config: RunConfig,
          dims: Sequence[int] = SWEEP_DIMS, lrs: Sequence[float] = (0.01,)) -> list[dict]:
    """Full train + eval per (embed_dim, lr) cell; a failing cell is recorded and skipped."""
    tasks = prepare_tasks(cities, entity_map, config)
    rows = []
    for d in dims:
        for lr in lrs:
            row = {"embed_dim": d, "lr": lr}
            try:
                cfg = replace(config, embed_dim=d, lr=lr)
                res = run_experiment(cities, entity_map, embed(d), cfg, tasks=tasks)
                row.update(MAE=res.mean_mae, MAPE=res.mean_mape, runtime_s=round(res.runtime_s, 3), status="ok")
            except Exception as exc:  # noqa: BLE001 - a cell failure must not stop the sweep
                logger.warning("sweep cell d=%s lr=%s failed: %s", d, lr, exc)
                row.update(MAE=float("nan"), MAPE=float("nan"), runtime_s=float("nan"),
                           status=f"error: {type(exc).__name__}: {exc}")
            rows.append(row)
    return rows


# -- synthetic transfer benchmark --------------------------------------------

BENCHMARK_CONFIG = dict(epochs=20, lr=0.01, snapshots_per_epoch=100, batch_size=10, T_in=7, embed_dim=16)


@dataclass
class BenchmarkResult:
    seeds: list[int]
    mae: dict[str, list[float]]   # variant -> mean test MAE per seed
    runtime_s: float

    def wins(self, a: str, b: str) -> int:
        return int(sum(x < y for x, y in zip(self.mae[a], self.mae[b])))

    def table(self) -> list[dict]:
        return [{"seed": s, **{v: self.mae[v][i] for v in self.mae}} for i, s in enumerate(self.seeds)]


def transfer_benchmark(kg: KnowledgeGraph, embed: Callable[[int], np.ndarray], seeds: Sequence[int] = range(10),
                       variants: Sequence[str] = VARIANTS, synth_kwargs: Mapping | None = None,
                       **config_overrides) -> BenchmarkResult:
    """Two synthetic cities per seed; every variant trained and tested on the same fixture.

    ``embed(seed)`` returns the KG embedding table for that seed.
    """
    start = time.perf_counter()
    mae: dict[str, list[float]] = {v: [] for v in variants}
    for seed in seeds:
        sc = synth_cities(seed, kg, **(synth_kwargs or {}))
        cfg = RunConfig(**{**BENCHMARK_CONFIG, **config_overrides, "seed": seed})
        results = ablate(list(zip(sc.cities, sc.graphs)), sc.entity_map, embed(seed), cfg, variants)
        for v in variants:
            mae[v].append(results[v].mean_mae)
        logger.info("benchmark seed %d: %s", seed, {v: round(mae[v][-1], 4) for v in variants})
    return BenchmarkResult(list(seeds), mae, time.perf_counter() - start)
