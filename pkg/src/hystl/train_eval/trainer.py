"""Round-robin multi-task training with best-validation checkpointing."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from ..model import BACKBONES, VARIANTS, HYSTLModel, loss_crime
from ..nn import NonFiniteError, adam_step
from .metrics import mae_mape
from .tasks import TaskSpec

logger = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class RunConfig:
    epochs: int = 20
    lr: float = 0.01
    snapshots_per_epoch: int = 100
    batch_size: int = 5
    T_in: int = 30
    seed: int = 0
    ablation: str = "full"
    backbone: str = "a3tgcn"
    embed_dim: int = 16
    feature_recipe: str = "zscore"
    loss_mode: str = "mean"
    val_days: int = 30
    neighbourhood: int = 8

    def __post_init__(self):
        if self.ablation not in VARIANTS:
            raise ValueError(f"ablation must be one of {VARIANTS}, got {self.ablation!r}")
        if self.backbone not in BACKBONES:
            raise ValueError(f"backbone must be one of {BACKBONES}, got {self.backbone!r}")
        for name in ("epochs", "snapshots_per_epoch", "batch_size", "T_in", "embed_dim", "val_days"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.loss_mode not in ("mean", "sum"):
            raise ValueError("loss_mode must be 'mean' or 'sum'")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    log: list[dict]
    best_epoch: int
    best_val_mae: float
    best_state: dict = field(repr=False, default_factory=dict)
    steps: int = 0


def _epoch_schedule(tasks: Sequence[TaskSpec], config: RunConfig, rng: np.random.Generator) -> list[tuple[int, np.ndarray]]:
    """(task index, target days) batches for one epoch, interleaved round-robin."""
    per_task = max(1, config.snapshots_per_epoch // len(tasks))
    queues = []
    for task in tasks:
        days = task.windows["fit"]
        n = min(per_task, days.size)
        start = int(rng.integers(days.size))
        picked = days[(start + np.arange(n)) % days.size]
        queues.append([picked[i:i + config.batch_size] for i in range(0, n, config.batch_size)])
    schedule = []
    for k in range(max(len(q) for q in queues)):
        for ti, q in enumerate(queues):
            if k < len(q):
                schedule.append((ti, q[k]))
    return schedule


def predict_split(model: HYSTLModel, task: TaskSpec, split: str, chunk: int = 64) -> tuple[np.ndarray, np.ndarray]:
    days = task.windows[split]
    preds, targets = [], []
    for i in range(0, days.size, chunk):
        X, Y = task.batch(days[i:i + chunk])
        preds.append(task.to_counts(model.predict(X, task.graph.A_norm, task.entity_id)))
        targets.append(Y)
    if not preds:
        R = task.graph.n_nodes
        return np.zeros((0, R)), np.zeros((0, R))
    return np.concatenate(targets), np.concatenate(preds)


def evaluate(model: HYSTLModel, tasks: Sequence[TaskSpec], split: str = "test") -> dict[str, dict]:
    """Per-task MAE/MAPE averaged over the target days of ``split``."""
    out = {}
    for task in tasks:
        y, yhat = predict_split(model, task, split)
        m = mae_mape(y, yhat)
        m.update(city=task.city_id, crime_type=task.crime_type)
        out[task.name] = m
    return out


def train(model: HYSTLModel, tasks: Sequence[TaskSpec], config: RunConfig, log_file=None) -> TrainResult:
    """Joint Adam training over all tasks; the best validation state is restored at the end.

    ``log_file`` (a writable text handle) receives one JSON line per
    (epoch, task).
    """
    if not tasks:
        raise ValueError("no tasks to train on")
    rng = np.random.default_rng(config.seed)
    records: list[dict] = []
    best_state = model.params.state_dict()
    best_val, best_epoch, steps = float("inf"), 0, 0
    model.params.zero_grad()
    for epoch in range(1, config.epochs + 1):
        sums = np.zeros(len(tasks))
        sse = np.zeros(len(tasks))
        counts = np.zeros(len(tasks), dtype=np.int64)
        for ti, days in _epoch_schedule(tasks, config, rng):
            task = tasks[ti]
            X, Y = task.batch(days)
            try:
                out, _ = model.forward(X, task.graph.A_norm, task.entity_id)
                pred = task.to_counts(out)
                loss = loss_crime(pred, Y, config.loss_mode)
                loss.backward()
            except NonFiniteError as exc:
                norms = model.params.param_norms()
                raise TrainingDiverged(
                    f"non-finite value at epoch {epoch}, task {task.name}, target days "
                    f"{days.tolist()}: {exc}; parameter norms {norms}") from exc
            adam_step(model.params, config.lr)
            steps += 1
            sq = float(np.sum((pred.data - Y) ** 2))
            sse[ti] += sq
            sums[ti] += loss.item() * days.size
            counts[ti] += days.size
        val = evaluate(model, tasks, "val")
        val_mae = float(np.mean([m["MAE"] for m in val.values()]))
        for ti, task in enumerate(tasks):
            rec = {
                "epoch": epoch,
                "task": task.name,
                "loss": float(sums[ti] / max(counts[ti], 1)),
                "sse": float(sse[ti]),
                "windows": int(counts[ti]),
                "val_mae": val[task.name]["MAE"],
            }
            records.append(rec)
            if log_file is not None:
                log_file.write(json.dumps(rec, sort_keys=True) + "\n")
        logger.info("epoch %d: train loss %.4f, val MAE %.4f", epoch,
                    float(sums.sum() / max(counts.sum(), 1)), val_mae)
        if val_mae < best_val:
            best_val, best_epoch = val_mae, epoch
            best_state = model.params.state_dict()
    model.params.load_state_dict(best_state)
    return TrainResult(records, best_epoch, best_val, best_state, steps)
