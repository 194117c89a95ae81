from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..geogrid import CrimeTensor
from ..nn import Tensor, mul
from ..stgraph import SpatialGraph, feature_array, make_recipe
from .splits import SplitSpec, split


@dataclass
class TaskSpec:
    """One (city, crime type) prediction task with its windows per split."""

    city_id: str
    crime_type: str
    entity_id: int
    graph: SpatialGraph
    split: SplitSpec
    features: np.ndarray          # (T, R, F)
    counts: np.ndarray            # (T, R) raw counts
    T_in: int
    windows: dict[str, np.ndarray] = field(default_factory=dict)  # split -> target days
    shift: np.ndarray | None = None   # (R,) output -> count affine from the feature recipe
    scale: np.ndarray | None = None

    @property
    def name(self) -> str:
        return f"{self.city_id}/{self.crime_type}"

    def batch(self, target_days: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
        """(B, T_in, R, F) inputs and (B, R) targets for the given target days."""
        days = np.asarray(target_days, dtype=np.int64)
        offsets = np.arange(-self.T_in, 0)
        X = self.features[days[:, None] + offsets[None, :]]
        return X, self.counts[days].astype(np.float64)

    def to_normalised(self, counts: np.ndarray) -> np.ndarray:
        if self.shift is None:
            return counts
        return (counts - self.shift) / self.scale

    def to_counts(self, out):
        """Map normalised network outputs (..., R) to count predictions."""
        if self.shift is None:
            return out
        if isinstance(out, Tensor):
            return mul(out, self.scale) + self.shift
        return np.asarray(out) * self.scale + self.shift


def build_tasks(cities: Sequence[tuple[CrimeTensor, SpatialGraph]], entity_map: Mapping[str, int],
                T_in: int, recipe: str = "zscore", val_days: int = 30) -> list[TaskSpec]:
    """Tasks for every crime type of every city.

    ``entity_map`` maps crime labels (or ``"city/label"`` keys, which take
    precedence) to KG entity ids. Feature statistics are fit on the fit
    days of each task only.
    """
    tasks = []
    for tensor, graph in cities:
        if graph.n_nodes != tensor.n_regions:
            raise ValueError(f"city {tensor.city_id}: graph has {graph.n_nodes} nodes, tensor {tensor.n_regions}")
        spec = split(tensor.n_days, T_in, val_days)
        for label in tensor.crime_types:
            key = f"{tensor.city_id}/{label}"
            if key in entity_map:
                eid = entity_map[key]
            elif label in entity_map:
                eid = entity_map[label]
            else:
                raise KeyError(f"crime type {key!r} has no KG entity")
            fitted = make_recipe(recipe)
            feats = feature_array(tensor, label, spec.fit.stop, fitted)
            shift, scale = fitted.output_affine(tensor.n_regions)
            task = TaskSpec(tensor.city_id, label, int(eid), graph, spec, feats,
                            tensor.series(label).astype(np.float64), T_in, shift=shift, scale=scale)
            for name in ("fit", "val", "test"):
                task.windows[name] = np.arange(spec.target_days(name, T_in).start,
                                               spec.target_days(name, T_in).stop)
            if task.windows["fit"].size == 0:
                raise ValueError(f"task {task.name}: no training windows")
            tasks.append(task)
    return tasks
