"""Grid adjacency, per-node features and next-day training windows."""
from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import date, timedelta
from typing import Sequence

import numpy as np

from .geogrid import CrimeTensor, GridSpec

NEIGHBOURHOODS = {
    4: ((-1, 0), (1, 0), (0, -1), (0, 1)),
    8: ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)),
}


@dataclass(frozen=True)
class SpatialGraph:
    n_nodes: int
    edges: tuple[tuple[int, int], ...]
    A: np.ndarray
    A_norm: np.ndarray

    @classmethod
    def from_edges(cls, n_nodes: int, edges) -> "SpatialGraph":
        canon = sorted({(min(i, j), max(i, j)) for i, j in edges if i != j})
        A = np.zeros((n_nodes, n_nodes))
        for i, j in canon:
            A[i, j] = A[j, i] = 1.0
        return cls(n_nodes, tuple(canon), A, normalize_adjacency(A))

    def degree(self) -> np.ndarray:
        return self.A.sum(axis=1)

    def to_json(self) -> str:
        return json.dumps({"n_nodes": self.n_nodes, "edges": [list(e) for e in self.edges]})

    @classmethod
    def from_json(cls, text: str) -> "SpatialGraph":
        d = json.loads(text)
        return cls.from_edges(d["n_nodes"], [tuple(e) for e in d["edges"]])


def normalize_adjacency(A: np.ndarray) -> np.ndarray:
    """Symmetric normalisation with self-loops: D^-1/2 (A + I) D^-1/2."""
    A_hat = A + np.eye(A.shape[0])
    d_inv_sqrt = 1.0 / np.sqrt(A_hat.sum(axis=1))
    return A_hat * d_inv_sqrt[:, None] * d_inv_sqrt[None, :]


def build_adjacency(grid: GridSpec, neighbourhood: int = 8) -> SpatialGraph:
    """Connect grid cells to their 8- (default) or 4-neighbours; nodes are row-major."""
    if neighbourhood not in NEIGHBOURHOODS:
        raise ValueError(f"neighbourhood must be 4 or 8, got {neighbourhood}")
    edges = []
    for r in range(grid.n_rows):
        for c in range(grid.n_cols):
            i = r * grid.n_cols + c
            for dr, dc in NEIGHBOURHOODS[neighbourhood]:
                rr, cc = r + dr, c + dc
                if 0 <= rr < grid.n_rows and 0 <= cc < grid.n_cols:
                    j = rr * grid.n_cols + cc
                    if i < j:
                        edges.append((i, j))
    return SpatialGraph.from_edges(grid.n_regions, edges)


# -- node features -----------------------------------------------------------

def weekend_flags(start: date, n_days: int) -> np.ndarray:
    return np.array([1.0 if (start + timedelta(days=i)).weekday() >= 5 else 0.0
                     for i in range(n_days)])


def next_day_weekend(start: date, n_days: int) -> np.ndarray:
    """Weekend flag of the day after each day.

    Used as the calendar feature, so the last step of an input window carries
    the (known in advance) weekend status of the day being forecast.
    """
    return weekend_flags(start + timedelta(days=1), n_days)


class FeatureRecipe:
    """Maps a (T, R) count series to (T, R, F) node features.

    ``fit`` sees only the training days; ``transform`` may then be applied
    to the whole series.
    """

    name = "base"
    n_features = 2

    def fit(self, train_counts: np.ndarray) -> "FeatureRecipe":
        return self

    def transform(self, counts: np.ndarray, start: date) -> np.ndarray:
        raise NotImplementedError

    def state(self) -> dict:
        return {"recipe": self.name}

    def output_affine(self, n_regions: int) -> tuple[np.ndarray, np.ndarray]:
        """(shift, scale) per region mapping a normalised output back to counts."""
        return np.zeros(n_regions), np.ones(n_regions)


class ZScoreWeekend(FeatureRecipe):
    """Per-region z-scored count plus the next-day weekend indicator.

    Population std (ddof=0); a zero std is replaced by 1.0.
    """

    name = "zscore"

    def __init__(self):
        self.mean: np.ndarray | None = None
        self.std: np.ndarray | None = None

    def fit(self, train_counts):
        train_counts = np.asarray(train_counts, dtype=np.float64)
        self.mean = train_counts.mean(axis=0)
        std = train_counts.std(axis=0)
        self.std = np.where(std > 0, std, 1.0)
        return self

    def transform(self, counts, start):
        if self.mean is None:
            raise RuntimeError("recipe used before fit")
        counts = np.asarray(counts, dtype=np.float64)
        z = (counts - self.mean) / self.std
        wk = np.broadcast_to(next_day_weekend(start, counts.shape[0])[:, None], counts.shape)
        return np.stack([z, wk], axis=-1)

    def output_affine(self, n_regions):
        if self.mean is None:
            raise RuntimeError("recipe used before fit")
        return self.mean.copy(), self.std.copy()


class ScaledWeekend(FeatureRecipe):
    """Count divided by the type's city-wide training mean, plus the next-day weekend flag.

    Unlike ``ZScoreWeekend`` this keeps relative region intensity visible
    while hiding the absolute level of the crime type.
    """

    name = "scaled"

    def __init__(self):
        self.scale: float | None = None

    def fit(self, train_counts):
        m = float(np.mean(train_counts)) if np.size(train_counts) else 0.0
        self.scale = m if m > 0 else 1.0
        return self

    def transform(self, counts, start):
        if self.scale is None:
            raise RuntimeError("recipe used before fit")
        counts = np.asarray(counts, dtype=np.float64)
        wk = np.broadcast_to(next_day_weekend(start, counts.shape[0])[:, None], counts.shape)
        return np.stack([counts / self.scale, wk], axis=-1)

    def output_affine(self, n_regions):
        if self.scale is None:
            raise RuntimeError("recipe used before fit")
        return np.zeros(n_regions), np.full(n_regions, self.scale)


class RawWeekend(FeatureRecipe):
    name = "raw"

    def transform(self, counts, start):
        counts = np.asarray(counts, dtype=np.float64)
        wk = np.broadcast_to(next_day_weekend(start, counts.shape[0])[:, None], counts.shape)
        return np.stack([counts, wk], axis=-1)


RECIPES = {cls.name: cls for cls in (ZScoreWeekend, ScaledWeekend, RawWeekend)}


def make_recipe(name: str) -> FeatureRecipe:
    try:
        return RECIPES[name]()
    except KeyError:
        raise ValueError(f"unknown feature recipe {name!r}; choose from {sorted(RECIPES)}") from None


def feature_array(tensor: CrimeTensor, crime_type: str, fit_days: int,
                  recipe: FeatureRecipe | str = "zscore") -> np.ndarray:
    """(T, R, F) features for one crime type, statistics fit on days [0, fit_days).

    A recipe instance passed in is left fitted, so its ``output_affine`` can
    be read afterwards.
    """
    if isinstance(recipe, str):
        recipe = make_recipe(recipe)
    series = tensor.series(crime_type)
    if not 1 <= fit_days <= tensor.n_days:
        raise ValueError(f"fit_days must lie in [1, {tensor.n_days}], got {fit_days}")
    recipe.fit(series[:fit_days])
    return recipe.transform(series, tensor.start_date)


def make_features(tensor: CrimeTensor, crime_type: str, t: int, fit_days: int,
                  recipe: FeatureRecipe | str = "zscore") -> np.ndarray:
    """(R, F) feature slice for day ``t``."""
    if not 0 <= t < tensor.n_days:
        raise IndexError(f"day {t} outside [0, {tensor.n_days})")
    return feature_array(tensor, crime_type, fit_days, recipe)[t]


# -- windows -----------------------------------------------------------------

@dataclass(frozen=True)
class GraphWindow:
    X_window: np.ndarray  # (T_in, R, F)
    target: np.ndarray    # (R,)
    crime_type: str
    t_target: int


def window_sequence(tensor: CrimeTensor, crime_type: str, T_in: int,
                    features: np.ndarray | None = None, fit_days: int | None = None,
                    recipe: FeatureRecipe | str = "zscore") -> list[GraphWindow]:
    """One window per target day t in [T_in, T): inputs are days [t - T_in, t)."""
    T = tensor.n_days
    if T_in < 1:
        raise ValueError("T_in must be at least 1")
    if T_in >= T:
        raise ValueError(f"sequence too short: T_in={T_in} needs more than {T} days")
    if features is None:
        features = feature_array(tensor, crime_type, fit_days or T, recipe)
    raw = tensor.series(crime_type).astype(np.float64)
    return [GraphWindow(features[t - T_in:t], raw[t], crime_type, t) for t in range(T_in, T)]


def stack_windows(windows: Sequence[GraphWindow]) -> tuple[np.ndarray, np.ndarray]:
    """Batch windows into (B, T_in, R, F) inputs and (B, R) targets."""
    return (np.stack([w.X_window for w in windows]), np.stack([w.target for w in windows]))
