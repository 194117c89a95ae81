"""Synthetic two-city fixtures whose crime types are linked through the KG.

Counts are Poisson with intensity ``base[r] * season[t] * factor[g(c), t]``.
Crime types joined by a relatedTo edge share a latent group factor (level,
weekly profile and an AR(1) log-intensity process); city A and city B carry
one member of each related pair, so the only route from one city's labels to
the other's is the KG.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date, timedelta
from typing import Sequence

import numpy as np

from ..crimekg import KnowledgeGraph
from ..geogrid import CrimeTensor, GridSpec
from ..stgraph import SpatialGraph, build_adjacency

DEFAULT_PAIRS = (("Larceny", "Theft"), ("Assault", "Battery"))


class SynthError(ValueError):
    pass


@dataclass
class SynthCities:
    cities: list[CrimeTensor]
    graphs: list[SpatialGraph]
    entity_map: dict[str, int]
    params: dict = field(default_factory=dict)
    intensity: list[np.ndarray] = field(default_factory=list, repr=False)  # per city, (T, R, C)


def related_pairs(kg: KnowledgeGraph, n_pairs: int = 2,
                  preferred: Sequence[tuple[str, str]] = DEFAULT_PAIRS) -> list[tuple[int, int]]:
    """``n_pairs`` node-disjoint crime_type pairs joined by relatedTo.

    ``preferred`` label pairs are used when present in the KG; the rest are
    filled greedily in (head, tail) id order.
    """
    types = kg.types()
    edges = sorted({(min(t.head, t.tail), max(t.head, t.tail)) for t in kg.triples
                    if t.relation == "relatedTo"
                    and types[t.head] == "crime_type" and types[t.tail] == "crime_type"})
    edge_set = set(edges)
    chosen: list[tuple[int, int]] = []
    used: set[int] = set()
    for a, b in preferred:
        try:
            ia, ib = kg.by_label(a).id, kg.by_label(b).id
        except KeyError:
            continue
        if (min(ia, ib), max(ia, ib)) in edge_set and not {ia, ib} & used:
            chosen.append((ia, ib))
            used |= {ia, ib}
        if len(chosen) == n_pairs:
            return chosen
    for a, b in edges:
        if not {a, b} & used:
            chosen.append((a, b))
            used |= {a, b}
            if len(chosen) == n_pairs:
                return chosen
    raise SynthError(f"KG has only {len(chosen)} disjoint related crime_type pairs, need {n_pairs}")


def _ar1(rng: np.random.Generator, n: int, phi: float, sigma: float) -> np.ndarray:
    x = np.empty(n)
    x[0] = rng.normal(0.0, sigma / np.sqrt(1.0 - phi * phi))
    eps = rng.normal(0.0, sigma, n)
    for t in range(1, n):
        x[t] = phi * x[t - 1] + eps[t]
    return x


def synth_cities(seed: int, kg: KnowledgeGraph, n_days: int = 365, n_rows: int = 3, n_cols: int = 3,
                 base_scale: float = 1.0, city_scale: Sequence[float] = (1.0, 1.0), levels: Sequence[float] = (4.0, 1.0),
                 phi: Sequence[float] = (0.9, 0.5), sigma: Sequence[float] = (0.12, 0.1),
                 weekend_effect: Sequence[float] = (1.0, -0.5), season_amp: float = 0.2,
                 pairs: Sequence[tuple[str, str]] = DEFAULT_PAIRS,
                 start: date = date(2020, 1, 1)) -> SynthCities:
    """Two cities with disjoint crime labels and KG-linked latent factors.

    Group ``g`` (one per related pair) has mean level ``levels[g]``, AR(1)
    log-factor with coefficient ``phi[g]`` and innovation scale ``sigma[g]``,
    and weekend intensity multiplied by ``1 + weekend_effect[g]`` (the weekly
    profile is renormalised to mean one). ``base_scale = 0`` gives all-zero
    tensors.
    """
    n_groups = len(levels)
    if not (len(phi) == len(sigma) == len(weekend_effect) == n_groups):
        raise SynthError("levels, phi, sigma and weekend_effect must have one entry per group")
    if len(city_scale) != 2 or min(city_scale) < 0:
        raise SynthError("city_scale needs two nonnegative entries")
    if n_days < 1 or n_rows < 1 or n_cols < 1:
        raise SynthError("n_days, n_rows and n_cols must be positive")
    id_pairs = related_pairs(kg, n_groups, pairs)
    rng = np.random.default_rng(seed)
    R = n_rows * n_cols
    t = np.arange(n_days)
    season = 1.0 + season_amp * np.sin(2.0 * np.pi * (t + rng.uniform(0, 365)) / 365.0)

    factors = np.empty((n_groups, n_days))
    weekly_profiles = []
    weekday = np.array([(start + timedelta(days=i)).weekday() for i in range(n_days)])
    for g in range(n_groups):
        if weekend_effect[g] <= -1.0:
            raise SynthError("weekend_effect must exceed -1")
        wp = np.where(np.arange(7) >= 5, 1.0 + weekend_effect[g], 1.0)
        wp = wp / wp.mean()
        weekly_profiles.append(wp)
        latent = _ar1(rng, n_days, phi[g], sigma[g])
        factors[g] = levels[g] * wp[weekday] * np.exp(latent - 0.5 * sigma[g] ** 2 / (1 - phi[g] ** 2))

    grid = GridSpec(0.0, 0.0, n_rows, n_cols, 0.0)
    region_index = [(r, c) for r in range(n_rows) for c in range(n_cols)]
    graph = build_adjacency(grid)
    cities, bases, intensities, entity_map = [], [], [], {}
    for ci, city in enumerate(("A", "B")):
        # mean-one spatial profile: a crime type's citywide level comes from its group only
        base = rng.gamma(2.0, 0.5, R)
        base = base_scale * city_scale[ci] * base / base.mean()
        bases.append(base)
        labels, counts = [], np.zeros((n_days, R, n_groups), dtype=np.int64)
        lams = np.zeros((n_days, R, n_groups))
        for g, pair in enumerate(id_pairs):
            eid = pair[ci]
            label = kg.entities[eid].label
            labels.append(label)
            entity_map[f"synth_{city}/{label}"] = eid
            lam = base[None, :] * season[:, None] * factors[g][:, None]
            lams[:, :, g] = lam
            counts[:, :, g] = rng.poisson(lam)
        intensities.append(lams)
        cities.append(CrimeTensor(counts, start, list(region_index), labels, f"synth_{city}"))

    params = {
        "seed": seed,
        "n_days": n_days,
        "grid": [n_rows, n_cols],
        "base_scale": base_scale,
        "city_scale": list(city_scale),
        "levels": list(levels),
        "phi": list(phi),
        "sigma": list(sigma),
        "weekend_effect": list(weekend_effect),
        "season_amp": season_amp,
        "groups": [[kg.entities[a].label, kg.entities[b].label] for a, b in id_pairs],
        "base": [b.tolist() for b in bases],
        "weekly_profiles": [w.tolist() for w in weekly_profiles],
    }
    return SynthCities(cities, [graph, graph], entity_map, params, intensities)
