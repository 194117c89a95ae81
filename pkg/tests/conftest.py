from datetime import date

import numpy as np
import pytest

from hystl.crimekg import load_snapshot
from hystl.geogrid import CrimeTensor, GridSpec
from hystl.stgraph import build_adjacency


@pytest.fixture(scope="session")
def snapshot_kg():
    return load_snapshot()


@pytest.fixture(scope="session")
def small_embedding(snapshot_kg):
    # cheap stand-in for a trained table; tests that need real
    # metapath2vec++ vectors build them explicitly
    rng = np.random.default_rng(7)
    return rng.normal(0.0, 0.5, (len(snapshot_kg.entities), 8))


def make_city(counts, city_id="c", labels=None, start=date(2021, 1, 4)):
    counts = np.asarray(counts)
    T, R, C = counts.shape
    side = int(round(np.sqrt(R)))
    rows, cols = (side, side) if side * side == R else (1, R)
    labels = labels or [f"type{k}" for k in range(C)]
    tensor = CrimeTensor(counts, start, [(r, c) for r in range(rows) for c in range(cols)], labels, city_id)
    return tensor, build_adjacency(GridSpec(0.0, 0.0, rows, cols, 0.0))


@pytest.fixture
def poisson_city():
    rng = np.random.default_rng(3)
    lam = rng.uniform(0.5, 3.0, (1, 9, 2))
    return make_city(rng.poisson(lam, (90, 9, 2)), "p", ["Theft", "Battery"])


# one "criterion N: PASS|FAIL ..." line per acceptance check, echoed in the
# terminal summary so it is visible without -s
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
