from datetime import date, timedelta

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_city
from hystl.geogrid import GridSpec
from hystl.stgraph import (
    SpatialGraph,
    build_adjacency,
    feature_array,
    make_features,
    make_recipe,
    next_day_weekend,
    stack_windows,
    weekend_flags,
    window_sequence,
)


def dense_norm(A):
    A_hat = A + np.eye(len(A))
    D = np.diag(A_hat.sum(axis=1) ** -0.5)
    return D @ A_hat @ D


def test_single_cell_grid():
    g = build_adjacency(GridSpec(0, 0, 1, 1, 0))
    assert g.n_nodes == 1 and g.edges == ()
    np.testing.assert_array_equal(g.A_norm, [[1.0]])


def test_two_by_two_fully_connected():
    assert len(build_adjacency(GridSpec(0, 0, 2, 2, 0)).edges) == 6


def test_three_by_three_degrees_and_entries():
    g = build_adjacency(GridSpec(0, 0, 3, 3, 0))
    deg = g.degree()
    assert deg[4] == 8 and deg[0] == 3 and deg[1] == 5
    # the centre is the only degree-8 node; its self-loop entry is 1/9
    assert g.A_norm[4, 4] == pytest.approx(1 / 9, abs=1e-15)
    # corner (degree 3) to centre: 1/sqrt(4 * 9)
    assert g.A_norm[0, 4] == pytest.approx(1 / 6, abs=1e-15)
    g4 = build_adjacency(GridSpec(0, 0, 3, 3, 0), neighbourhood=4)
    assert g4.degree()[4] == 4 and g4.A[0, 4] == 0
    with pytest.raises(ValueError):
        build_adjacency(GridSpec(0, 0, 3, 3, 0), neighbourhood=6)


@pytest.mark.parametrize("rows,cols", [(r, c) for r in range(1, 6) for c in range(1, 6)])
def test_normalisation_matches_dense_and_spectrum(rows, cols):
    g = build_adjacency(GridSpec(0, 0, rows, cols, 0))
    assert np.array_equal(g.A, g.A.T) and not np.diag(g.A).any()
    np.testing.assert_allclose(g.A_norm, dense_norm(g.A), atol=1e-12)
    v = np.ones(g.n_nodes)
    for _ in range(500):
        v = g.A_norm @ v
        v /= np.linalg.norm(v)
    assert v @ g.A_norm @ v <= 1 + 1e-9
    assert build_adjacency(GridSpec(0, 0, rows, cols, 0)).edges == g.edges


def test_isolated_node_is_unit_self_loop():
    g = SpatialGraph.from_edges(3, [(0, 1)])
    np.testing.assert_allclose(g.A_norm[2], [0, 0, 1])
    assert (g.A_norm.sum(axis=1) > 0).all()


def test_graph_json_round_trip():
    g = build_adjacency(GridSpec(0, 0, 2, 3, 0))
    back = SpatialGraph.from_json(g.to_json())
    assert back.edges == g.edges
    np.testing.assert_array_equal(back.A_norm, g.A_norm)


def test_zscore_examples():
    counts = np.zeros((4, 2, 1), dtype=int)
    counts[:3, 0, 0] = [0, 2, 4]
    counts[3, 0, 0] = 2
    counts[:, 1, 0] = 5  # constant region: std floored to 1
    tensor, _ = make_city(counts, labels=["A"])
    f = make_features(tensor, "A", 3, fit_days=3)
    assert f[0, 0] == 0.0 and f[1, 0] == 0.0
    # population std of [0, 2, 4] is sqrt(8/3)
    assert feature_array(tensor, "A", 3)[0, 0, 0] == pytest.approx(-2 / np.sqrt(8 / 3))


def test_calendar_feature_flags_the_following_day():
    friday = date(2021, 1, 8)
    assert friday.weekday() == 4
    np.testing.assert_array_equal(weekend_flags(friday, 4), [0, 1, 1, 0])
    np.testing.assert_array_equal(next_day_weekend(friday, 4), [1, 1, 0, 0])
    counts = np.ones((4, 2, 1), dtype=int)
    tensor, _ = make_city(counts, labels=["A"], start=friday)
    np.testing.assert_array_equal(make_features(tensor, "A", 0, 4)[:, 1], [1.0, 1.0])


def test_recipes_and_output_affine():
    rng = np.random.default_rng(0)
    counts = rng.poisson(3.0, (20, 4, 1))
    tensor, _ = make_city(counts, labels=["A"])
    series = counts[:, :, 0].astype(float)
    for name in ("zscore", "scaled", "raw"):
        recipe = make_recipe(name)
        feats = feature_array(tensor, "A", 10, recipe)
        shift, scale = recipe.output_affine(4)
        # the affine undoes the count channel exactly
        np.testing.assert_allclose(feats[..., 0] * scale + shift, series, atol=1e-12)
    with pytest.raises(ValueError):
        make_recipe("lagged")
    with pytest.raises(RuntimeError):
        make_recipe("zscore").output_affine(4)


def test_statistics_ignore_days_after_fit_window():
    rng = np.random.default_rng(1)
    counts = rng.poisson(3.0, (30, 4, 1))
    poisoned = counts.copy()
    poisoned[20:] = 1000
    a = feature_array(make_city(counts, labels=["A"])[0], "A", 20)
    b = feature_array(make_city(poisoned, labels=["A"])[0], "A", 20)
    np.testing.assert_array_equal(a[:20], b[:20])


def test_unknown_crime_type_raises():
    tensor, _ = make_city(np.ones((5, 1, 1), dtype=int), labels=["A"])
    with pytest.raises((KeyError, ValueError)):
        make_features(tensor, "B", 0, 5)
    with pytest.raises(IndexError):
        make_features(tensor, "A", 5, 5)


def test_window_counts():
    tensor, _ = make_city(np.ones((31, 1, 1), dtype=int), labels=["A"])
    (w,) = window_sequence(tensor, "A", 30)
    assert w.t_target == 30
    tensor, _ = make_city(np.ones((40, 1, 1), dtype=int), labels=["A"])
    assert len(window_sequence(tensor, "A", 30)) == 10
    with pytest.raises(ValueError, match="too short"):
        window_sequence(tensor, "A", 40)


@settings(max_examples=30, deadline=None)
@given(st.integers(8, 30), st.integers(1, 7), st.integers(0, 2**31))
def test_windows_match_slicing_oracle(T, T_in, seed):
    rng = np.random.default_rng(seed)
    counts = rng.poisson(2.0, (T, 4, 2))
    tensor, _ = make_city(counts, labels=["A", "B"])
    feats = feature_array(tensor, "B", T)
    windows = window_sequence(tensor, "B", T_in, features=feats)
    assert len(windows) == T - T_in
    for k, w in enumerate(windows):
        t = T_in + k
        assert w.t_target == t and w.X_window.shape == (T_in, 4, 2)
        for j in range(T_in):
            np.testing.assert_array_equal(w.X_window[j], feats[t - T_in + j])
        np.testing.assert_array_equal(w.target, counts[t, :, 1])
    X, Y = stack_windows(windows)
    assert X.shape == (T - T_in, T_in, 4, 2) and Y.shape == (T - T_in, 4)


def test_weekend_flags_calendar():
    start = date(2021, 1, 4)
    flags = weekend_flags(start, 14)
    for i, f in enumerate(flags):
        assert f == float((start + timedelta(days=i)).strftime("%a") in ("Sat", "Sun"))
