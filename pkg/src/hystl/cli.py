"""Command-line entry point: ``hystl <command> --config run.toml [flags]``.

Every command writes into ``--out`` together with ``effective_config.toml``
(the config after flag overrides) and ``run_manifest.json`` (hashes, command,
version and timestamps; the only file carrying wall-clock data).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import fields, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
import tomli_w

from . import __version__
from .crimekg import (
    DEFAULT_BLOCKLIST,
    DEFAULT_SEEDS,
    AmbiguousLabelError,
    KGIntegrityError,
    KnowledgeGraph,
    build_kg,
    data_dir,
    default_aliases,
    fetch_wiki_metadata,
    filter_and_expand,
    kg_stats,
    load_aliases,
    load_kg,
    load_pages,
    load_type_overrides,
    map_crime_labels,
    save_kg,
    snapshot_dir,
)
from .geogrid import CrimeTensor, GridSpec, IngestError, ingest_csv
from .kg_embed import EmbeddingMatrix, embed_kg
from .model import HYSTLModel
from .nn import ShapeError
from .stgraph import SpatialGraph, build_adjacency
from .train_eval import RunConfig, TrainingDiverged, evaluate, synth_cities
from .train_eval.experiments import (
    METRIC_FIELDS,
    SWEEP_DIMS,
    SWEEP_FIELDS,
    RunResult,
    comparison_rows,
    config_hash,
    load_word_vectors,
    prepare_tasks,
    run_experiment,
    sweep,
    variant_embeddings,
    write_csv,
    write_metrics,
    word_vector_init,
)

logger = logging.getLogger("hystl")

EXIT_MISSING = 2
EXIT_INVARIANT = 3


class MissingInput(Exception):
    pass


class InvariantViolation(Exception):
    pass


# -- config --------------------------------------------------------------------

def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise MissingInput(f"config file not found: {p}")
    with open(p, "rb") as f:
        try:
            return tomllib.load(f)
        except tomllib.TOMLDecodeError as exc:
            raise InvariantViolation(f"config {p} is not valid TOML: {exc}") from None


def apply_overrides(cfg: dict, args: argparse.Namespace) -> dict:
    """Flags win over config keys; the result is what gets written back."""
    cfg = json.loads(json.dumps(cfg))  # deep copy
    train = cfg.setdefault("train", {})
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
        train["seed"] = args.seed
    if getattr(args, "ablation", None):
        train["ablation"] = args.ablation
    if getattr(args, "backbone", None):
        train["backbone"] = args.backbone
    if getattr(args, "city", None):
        cfg.setdefault("data", {})["city_filter"] = list(args.city)
    if getattr(args, "offline", False):
        cfg.setdefault("kg", {})["offline"] = True
    if getattr(args, "allow_unmapped", False):
        cfg.setdefault("data", {})["allow_unmapped"] = True
    if not train:
        del cfg["train"]
    return cfg


def run_config(cfg: dict) -> RunConfig:
    known = {f.name for f in fields(RunConfig)}
    section = dict(cfg.get("train", {}))
    unknown = set(section) - known
    if unknown:
        raise InvariantViolation(f"unknown [train] keys: {sorted(unknown)}")
    section.setdefault("seed", cfg.get("seed", 0))
    try:
        return RunConfig(**section)
    except (TypeError, ValueError) as exc:
        raise InvariantViolation(f"[train] config: {exc}") from None


# -- manifest --------------------------------------------------------------------

def _hash_path(path: Path, h) -> None:
    if path.is_dir():
        for child in sorted(path.rglob("*")):
            if child.is_file() and child.name != "run_manifest.json":
                h.update(str(child.relative_to(path)).encode())
                h.update(child.read_bytes())
    elif path.is_file():
        h.update(path.read_bytes())


def input_hashes(paths: Sequence[str | Path]) -> dict[str, str]:
    out = {}
    for p in paths:
        h = hashlib.sha256()
        _hash_path(Path(p), h)
        out[str(p)] = h.hexdigest()
    return out


class RunDir:
    """Output directory with its effective config and single run manifest."""

    def __init__(self, out: str | Path, command: str, cfg: dict, argv: Sequence[str]):
        self.path = Path(out)
        self.path.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.cfg = cfg
        self.argv = list(argv)
        self.inputs: list[Path] = []
        self.started = datetime.now(timezone.utc)
        (self.path / "effective_config.toml").write_text(tomli_w.dumps(cfg), encoding="utf-8")

    def finish(self, extra: dict | None = None) -> None:
        manifest = {
            "command": self.command,
            "argv": self.argv,
            "tool_version": __version__,
            "seed": self.cfg.get("seed"),
            "config_hash": config_hash(self.cfg),
            "input_hashes": input_hashes(sorted(set(self.inputs))),
            "started": self.started.isoformat(),
            "finished": datetime.now(timezone.utc).isoformat(),
        }
        manifest.update(extra or {})
        (self.path / "run_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# -- loading helpers -----------------------------------------------------------

def _require(path: str | Path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise MissingInput(f"{what} not found: {p}")
    return p


def _load(what: str, fn, path):
    path = _require(path, what)
    try:
        return fn(path)
    except FileNotFoundError as exc:
        raise MissingInput(f"{what} incomplete at {path}: {exc}") from None
    except (ValueError, KeyError, KGIntegrityError, json.JSONDecodeError) as exc:
        raise InvariantViolation(f"{what} at {path} failed its integrity checks: {exc}") from None


def load_kg_from(cfg: dict, run: RunDir | None = None) -> KnowledgeGraph:
    kg_dir = cfg.get("kg", {}).get("dir") or snapshot_dir()
    kg = _load("knowledge graph", load_kg, kg_dir)
    if run is not None:
        run.inputs.append(Path(kg_dir))
    return kg


def load_embedding(cfg: dict, kg: KnowledgeGraph, d: int, seed: int, run: RunDir | None = None) -> np.ndarray:
    emb_cfg = cfg.get("embedding", {})
    if emb_cfg.get("dir"):
        emb = _load("embedding", EmbeddingMatrix.load, emb_cfg["dir"])
        if run is not None:
            run.inputs.append(Path(emb_cfg["dir"]))
        if emb.Z.shape != (len(kg.entities), d):
            raise InvariantViolation(
                f"embedding shape {emb.Z.shape} does not match KG size {len(kg.entities)} x embed_dim {d}")
        return emb.Z
    return _embed(kg, emb_cfg, d, seed).Z


def _embed(kg: KnowledgeGraph, emb_cfg: dict, d: int, seed: int) -> EmbeddingMatrix:
    keys = ("walks_per_node", "walk_length", "window", "negatives", "epochs", "lr")
    return embed_kg(kg, d=d, seed=seed, **{k: emb_cfg[k] for k in keys if k in emb_cfg})


def load_city(path: str | Path, neighbourhood: int = 8) -> tuple[CrimeTensor, SpatialGraph]:
    path = Path(path)
    tensor = CrimeTensor.load(path)
    if (path / "graph.json").is_file():
        graph = SpatialGraph.from_json((path / "graph.json").read_text())
    elif (path / "grid.json").is_file():
        graph = build_adjacency(GridSpec.from_dict(json.loads((path / "grid.json").read_text())), neighbourhood)
    else:
        rows = max(r for r, _ in tensor.region_index) + 1
        cols = max(c for _, c in tensor.region_index) + 1
        if rows * cols != tensor.n_regions:
            raise ValueError("region_index is not a full grid and no graph.json is present")
        graph = build_adjacency(GridSpec(0.0, 0.0, rows, cols, 0.0), neighbourhood)
    if graph.n_nodes != tensor.n_regions:
        raise ValueError(f"graph has {graph.n_nodes} nodes but tensor has {tensor.n_regions} regions")
    return tensor, graph


def save_city(path: Path, tensor: CrimeTensor, graph: SpatialGraph, grid: GridSpec | None = None) -> None:
    tensor.save(path)
    (path / "graph.json").write_text(graph.to_json())
    if grid is not None:
        (path / "grid.json").write_text(json.dumps(grid.to_dict(), indent=2, sort_keys=True) + "\n")


def load_cities(cfg: dict, kg: KnowledgeGraph, run: RunDir | None = None):
    """City tensors and graphs plus the ``city/label -> entity id`` map."""
    data = cfg.get("data", {})
    neighbourhood = int(data.get("neighbourhood", 8))
    city_dirs: list[Path] = []
    entity_map: dict[str, int] = {}
    if data.get("synth"):
        root = _require(data["synth"], "synthetic city directory")
        em = _load("entity map", lambda p: json.loads((p / "entity_map.json").read_text()), root)
        entity_map.update({k: int(v) for k, v in em["entities"].items()})
        city_dirs += [root / c for c in em["cities"]]
    city_dirs += [Path(p) for p in data.get("cities", [])]
    if not city_dirs:
        raise MissingInput("no input cities: set [data] cities = [...] or [data] synth = DIR")
    cities = []
    for d in city_dirs:
        tensor, graph = _load("city tensor", lambda p: load_city(p, neighbourhood), d)
        if run is not None:
            run.inputs.append(d)
        cities.append((tensor, graph))
    wanted = data.get("city_filter")
    if wanted:
        cities = [c for c in cities if c[0].city_id in wanted]
        missing = set(wanted) - {c[0].city_id for c in cities}
        if missing:
            raise MissingInput(f"--city names not found among inputs: {sorted(missing)}")

    aliases_path = cfg.get("kg", {}).get("aliases")
    aliases = load_aliases(_require(aliases_path, "alias table")) if aliases_path else default_aliases()
    allow = bool(data.get("allow_unmapped", False))
    kept = []
    for tensor, graph in cities:
        labels = [l for l in tensor.crime_types if f"{tensor.city_id}/{l}" not in entity_map]
        try:
            mapping, unmapped = map_crime_labels(labels, kg, aliases)
        except AmbiguousLabelError as exc:
            raise InvariantViolation(f"crime label mapping: {exc}") from None
        entity_map.update({f"{tensor.city_id}/{k}": v for k, v in mapping.items()})
        if unmapped and not allow:
            raise InvariantViolation(
                f"every crime type must map to a KG entity; city {tensor.city_id!r} has unmapped labels "
                f"{unmapped} (add aliases or pass --allow-unmapped)")
        if unmapped:
            logger.warning("city %s: dropping unmapped crime types %s", tensor.city_id, unmapped)
            keep = [i for i, l in enumerate(tensor.crime_types) if l not in unmapped]
            if not keep:
                continue
            tensor = CrimeTensor(tensor.counts[:, :, keep], tensor.start_date, tensor.region_index,
                                 [tensor.crime_types[i] for i in keep], tensor.city_id, tensor.resolution)
        kept.append((tensor, graph))
    if not kept:
        raise InvariantViolation("no crime type of any city maps to a KG entity")
    return kept, entity_map


# -- commands --------------------------------------------------------------------

def cmd_ingest(args, cfg, run: RunDir) -> dict:
    sec = cfg.get("ingest", {})
    if "csv" not in sec or "column_map" not in sec:
        raise MissingInput("[ingest] needs csv = PATH and a [ingest.column_map] table")
    src = _require(sec["csv"], "incident CSV")
    run.inputs.append(src)
    column_map = dict(sec["column_map"])
    column_map.setdefault("city_id", sec.get("city_id", src.stem))
    try:
        tensor, grid, summary = ingest_csv(str(src), column_map, sec.get("crime_types"),
                                           float(sec.get("cell_km", 3.0)))
    except IngestError as exc:
        raise InvariantViolation(f"ingest: {exc}") from None
    graph = build_adjacency(grid, int(cfg.get("data", {}).get("neighbourhood", 8)))
    city_dir = run.path / tensor.city_id
    save_city(city_dir, tensor, graph, grid)
    (run.path / "ingest_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"{tensor.city_id}: {tensor.n_days} days x {tensor.n_regions} regions x {len(tensor.crime_types)} "
          f"types; {summary['retained']} of {summary['total_rows']} rows retained -> {city_dir}")
    return {"outputs": [tensor.city_id]}


def cmd_build_kg(args, cfg, run: RunDir) -> dict:
    sec = cfg.get("kg", {})
    if sec.get("fetch", False):
        cache_only = bool(sec.get("offline", False))
        pages, report = fetch_wiki_metadata(sec.get("seeds", list(DEFAULT_SEEDS)), int(sec.get("depth", 1)),
                                            cache_dir=sec.get("cache_dir"), offline=cache_only)
        source = f"live crawl (offline={cache_only}): {report}"
    else:
        pages_path = sec.get("pages") or data_dir() / "snapshot_pages.json"
        pages = _load("page metadata", load_pages, pages_path)
        run.inputs.append(Path(pages_path))
        source = "page metadata file"
    blocklist = sec.get("blocklist", list(DEFAULT_BLOCKLIST))
    max_degree = sec.get("max_degree", 9)
    filtered = filter_and_expand(pages, blocklist, max_degree, sec.get("keywords"))
    overrides = load_type_overrides(sec.get("overrides")) if sec.get("overrides", True) else {}
    try:
        kg = build_kg(filtered.pages, overrides=overrides)
    except KGIntegrityError as exc:
        raise InvariantViolation(f"knowledge graph: {exc}") from None
    provenance = {"source": source, "blocklist": list(blocklist), "max_degree": max_degree,
                  "removed": filtered.removed, "review": filtered.review,
                  "type_rules": "default + overrides" if overrides else "default"}
    save_kg(kg, run.path / "kg", provenance)
    stats = kg_stats(kg)
    (run.path / "kg_stats.json").write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n")
    print(f"KG: {stats['n_nodes']} entities, {stats['n_edges']} edges, avg degree {stats['avg_degree']:.3f}")
    return {}


def cmd_embed_kg(args, cfg, run: RunDir) -> dict:
    kg = load_kg_from(cfg, run)
    sec = cfg.get("embedding", {})
    d = int(sec.get("d", cfg.get("train", {}).get("embed_dim", 16)))
    seed = int(cfg.get("seed", 0))
    emb = _embed(kg, sec, d, seed)
    emb.save(run.path / "embedding")
    print(f"embedded {emb.Z.shape[0]} entities in {d} dimensions -> {run.path / 'embedding'}")
    return {}


def _train_one(cfg: dict, config: RunConfig, out: Path, run: RunDir, Z: np.ndarray, cities, entity_map,
               tasks=None) -> RunResult:
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "train_log.jsonl", "w", encoding="utf-8") as log:
        result = run_experiment(cities, entity_map, Z, config, log_file=log, tasks=tasks)
    ckpt = out / "checkpoint"
    result.model.save(ckpt, crime_map=entity_map, embedding_ref=cfg.get("embedding", {}).get("dir"))
    (ckpt / "run_config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
    (ckpt / "effective_config.toml").write_text(tomli_w.dumps(cfg), encoding="utf-8")
    write_metrics(out, result)
    return result


def _print_metrics(result: RunResult, label: str = "") -> None:
    head = f"[{label}] " if label else ""
    for task, m in sorted(result.metrics.items()):
        print(f"{head}{task}: MAE {m['MAE']:.4f}  MAPE {m['MAPE']:.4f}")
    print(f"{head}mean: MAE {result.mean_mae:.4f}  MAPE {result.mean_mape:.4f}")


def cmd_train(args, cfg, run: RunDir) -> dict:
    config = run_config(cfg)
    kg = load_kg_from(cfg, run)
    cities, entity_map = load_cities(cfg, kg, run)
    Z = load_embedding(cfg, kg, config.embed_dim, config.seed, run)
    if config.ablation == "no_kg":
        Z = _no_kg_table(cfg, kg, Z, config.seed)
    result = _train_one(cfg, config, run.path, run, Z, cities, entity_map)
    _print_metrics(result)
    return {"runtime_s": round(result.runtime_s, 3)}


def _no_kg_table(cfg: dict, kg: KnowledgeGraph, Z: np.ndarray, seed: int) -> np.ndarray:
    path = cfg.get("ablation", {}).get("word_vectors")
    if path:
        vectors = _load("word vectors", load_word_vectors, path)
        try:
            init = word_vector_init(kg, vectors, Z.shape[1], seed)
        except ValueError as exc:
            raise InvariantViolation(str(exc)) from None
        return variant_embeddings("no_kg", Z, seed, init)
    return variant_embeddings("no_kg", Z, seed)


def cmd_eval(args, cfg, run: RunDir) -> dict:
    if not args.checkpoint:
        raise MissingInput("eval needs --checkpoint DIR")
    ckpt = _require(args.checkpoint, "checkpoint")
    model, manifest = _load("checkpoint", HYSTLModel.load, ckpt)
    run.inputs.append(ckpt)
    saved = _load("checkpoint run config", lambda p: json.loads((p / "run_config.json").read_text()), ckpt)
    config = RunConfig(**saved)
    kg = load_kg_from(cfg, run)
    if len(kg.entities) != manifest["n_entities"]:
        raise InvariantViolation(f"checkpoint expects {manifest['n_entities']} entities, KG has {len(kg.entities)}")
    cities, entity_map = load_cities(cfg, kg, run)
    tasks = prepare_tasks(cities, entity_map, config)
    split = args.split
    metrics = evaluate(model, tasks, split)
    result = RunResult(config, metrics, -1, float("nan"), 0.0)
    write_metrics(run.path, result)
    _print_metrics(result, split)
    return {"checkpoint": str(ckpt), "split": split}


def cmd_ablate(args, cfg, run: RunDir) -> dict:
    config = run_config(cfg)
    kg = load_kg_from(cfg, run)
    cities, entity_map = load_cities(cfg, kg, run)
    Z = load_embedding(cfg, kg, config.embed_dim, config.seed, run)
    variants = cfg.get("ablation", {}).get("variants", ["full", "no_kg", "no_hypernet"])
    tasks = prepare_tasks(cities, entity_map, config)
    results = {}
    for v in variants:
        Zv = _no_kg_table(cfg, kg, Z, config.seed) if v == "no_kg" else Z
        vcfg = json.loads(json.dumps(cfg))
        vcfg.setdefault("train", {})["ablation"] = v
        sub = RunDir(run.path / v, f"{run.command}:{v}", vcfg, run.argv)
        sub.inputs = list(run.inputs)
        results[v] = _train_one(vcfg, replace(config, ablation=v), sub.path, sub, Zv, cities, entity_map, tasks)
        sub.finish({"runtime_s": round(results[v].runtime_s, 3)})
        _print_metrics(results[v], v)
    rows = comparison_rows(results, "variant")
    write_csv(run.path / "comparison.csv", rows)
    return {}


def cmd_sweep(args, cfg, run: RunDir) -> dict:
    config = run_config(cfg)
    kg = load_kg_from(cfg, run)
    cities, entity_map = load_cities(cfg, kg, run)
    sec = cfg.get("sweep", {})
    dims = [int(d) for d in sec.get("dims", SWEEP_DIMS)]
    lrs = [float(x) for x in sec.get("lrs", [config.lr])]
    emb_cfg = cfg.get("embedding", {})
    rows = sweep(cities, entity_map, lambda d: _embed(kg, emb_cfg, d, config.seed).Z, config, dims, lrs)
    write_csv(run.path / "sweep.csv", rows, SWEEP_FIELDS)
    for r in rows:
        print(f"d={r['embed_dim']:>4} lr={r['lr']:<8g} MAE {r['MAE']:.4f}  MAPE {r['MAPE']:.4f}  {r['status']}")
    return {}


def cmd_synth(args, cfg, run: RunDir) -> dict:
    kg = load_kg_from(cfg, run)
    sec = dict(cfg.get("synth", {}))
    for key in ("levels", "phi", "sigma", "weekend_effect", "city_scale"):
        if key in sec:
            sec[key] = tuple(sec[key])
    if "pairs" in sec:
        sec["pairs"] = tuple(tuple(p) for p in sec["pairs"])
    try:
        sc = synth_cities(int(cfg["seed"]), kg, **sec)
    except TypeError as exc:
        raise InvariantViolation(f"[synth] config: {exc}") from None
    except ValueError as exc:
        raise InvariantViolation(f"synth: {exc}") from None
    names = []
    for tensor, graph in zip(sc.cities, sc.graphs):
        save_city(run.path / tensor.city_id, tensor, graph)
        names.append(tensor.city_id)
    doc = {"cities": names, "entities": sc.entity_map}
    (run.path / "entity_map.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    (run.path / "synth_params.json").write_text(json.dumps(sc.params, indent=2, sort_keys=True) + "\n")
    print(f"wrote {', '.join(names)} ({sc.params['n_days']} days, groups {sc.params['groups']}) -> {run.path}")
    return {}


def cmd_report(args, cfg, run: RunDir) -> dict:
    if not args.runs:
        raise MissingInput("report needs one or more run directories")
    long_rows, table = [], {}
    for d in args.runs:
        doc = _load("metrics", lambda p: json.loads((p / "metrics.json").read_text()), d)
        run.inputs.append(Path(d) / "metrics.json")
        c = doc["config"]
        key = (c["ablation"], c["backbone"], doc["seed"])
        for task, m in sorted(doc["tasks"].items()):
            long_rows.append({"variant": c["ablation"], "backbone": c["backbone"], "seed": doc["seed"],
                              "run": str(d), **{k: m[k] for k in METRIC_FIELDS[1:]}, "task": task})
            table.setdefault(key, {})[task] = m
    write_csv(run.path / "report_long.csv", long_rows, ("variant", "backbone", "seed", "run") + METRIC_FIELDS)
    tasks = sorted({t for v in table.values() for t in v})
    rows = []
    for (variant, backbone, seed), per in table.items():
        row = {"variant": variant, "backbone": backbone, "seed": seed}
        for t in tasks:
            row[f"MAE[{t}]"] = per[t]["MAE"] if t in per else None
            row[f"MAPE[{t}]"] = per[t]["MAPE"] if t in per else None
        row["mean_MAE"] = float(np.mean([per[t]["MAE"] for t in per]))
        row["mean_MAPE"] = float(np.nanmean([per[t]["MAPE"] for t in per]))
        rows.append(row)
    write_csv(run.path / "report.csv", rows)
    width = max([len(t) for t in tasks] + [8])
    print(f"{'variant':<12} {'backbone':<8} " + " ".join(f"{t:>{width}}" for t in tasks) + "  mean MAE")
    for r in rows:
        vals = " ".join(f"{r[f'MAE[{t}]']:>{width}.4f}" if r[f"MAE[{t}]"] is not None else " " * width
                        for t in tasks)
        print(f"{r['variant']:<12} {r['backbone']:<8} {vals}  {r['mean_MAE']:.4f}")
    return {}


COMMANDS = {
    "ingest": (cmd_ingest, "grid and count an incident CSV into a city tensor"),
    "build-kg": (cmd_build_kg, "build the crime knowledge graph from page metadata"),
    "embed-kg": (cmd_embed_kg, "metapath2vec++ embeddings of the knowledge graph"),
    "train": (cmd_train, "train one model and evaluate it on the test split"),
    "eval": (cmd_eval, "evaluate a checkpoint"),
    "ablate": (cmd_ablate, "train full, no_kg and no_hypernet on the same data"),
    "sweep": (cmd_sweep, "embedding-size x learning-rate grid"),
    "synth": (cmd_synth, "write the synthetic two-city fixture"),
    "report": (cmd_report, "merge metrics.json files into comparison tables"),
}
SEED_REQUIRED = {"train", "ablate", "sweep", "synth"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hystl", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="TOML run configuration")
        p.add_argument("--seed", type=int, required=name in SEED_REQUIRED)
        p.add_argument("--out", default=None, help="run directory (default: runs/<command>)")
        p.add_argument("--city", action="append", help="restrict to this city id (repeatable)")
        p.add_argument("--ablation", choices=["full", "no_kg", "no_hypernet"])
        p.add_argument("--backbone", choices=["a3tgcn", "tgcn"])
        p.add_argument("--offline", action="store_true", help="never touch the network")
        p.add_argument("--allow-unmapped", action="store_true",
                       help="drop crime types without a KG entity instead of failing")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "eval":
            p.add_argument("--checkpoint", help="checkpoint directory written by train")
            p.add_argument("--split", default="test", choices=["val", "test"])
        if name == "report":
            p.add_argument("runs", nargs="*", help="run directories containing metrics.json")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    func = COMMANDS[args.command][0]
    try:
        base = load_config(args.config)
        if args.command == "eval" and args.config is None and args.checkpoint:
            # reuse the training run's configuration stored next to the weights
            base = _load("checkpoint config", lambda p: tomllib.loads((p / "effective_config.toml").read_text()),
                         args.checkpoint)
        cfg = apply_overrides(base, args)
        run = RunDir(args.out or Path("runs") / args.command, args.command, cfg, argv)
        if args.config:
            run.inputs.append(Path(args.config))
        extra = func(args, cfg, run)
        run.finish(extra)
    except MissingInput as exc:
        print(f"error: missing input: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (InvariantViolation, KGIntegrityError, ShapeError, TrainingDiverged) as exc:
        print(f"error: invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    return 0


if __name__ == "__main__":
    sys.exit(main())
