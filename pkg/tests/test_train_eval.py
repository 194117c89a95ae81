import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from conftest import make_city
from hystl.crimekg import Entity, KnowledgeGraph, Triple
from hystl.train_eval import (
    RunConfig,
    SynthError,
    TrainingDiverged,
    build_tasks,
    evaluate,
    mae_mape,
    related_pairs,
    split,
    synth_cities,
    train,
)
from hystl.train_eval.experiments import (
    SWEEP_FIELDS,
    ablate,
    comparison_rows,
    config_hash,
    gaussian_like,
    make_model,
    run_experiment,
    swap_backbone,
    sweep,
    variant_embeddings,
    write_metrics,
)

ENTITY_MAP = {"Theft": 0, "Battery": 1}
TINY = dict(epochs=2, snapshots_per_epoch=8, batch_size=4, T_in=3, val_days=10)


def tiny_model(tasks, seed=0, **kw):
    cfg = RunConfig(**{**TINY, **kw, "seed": seed})
    Z = np.random.default_rng(11).normal(size=(3, 16))
    return make_model(Z, cfg, 2), cfg


# -- splits ---------------------------------------------------------------------

def test_split_examples():
    s = split(800, 30)
    assert (s.n_test, s.n_train) == (100, 700)
    assert s.val == range(670, 700) and s.test == range(700, 800) and s.fit == range(0, 670)
    s = split(80, 30)
    assert s.n_test == 10 and s.n_train == 70 and s.val == range(40, 70)
    with pytest.raises(ValueError, match="too short"):
        split(37, 30)


def test_short_training_period_validates_on_all_of_it(caplog):
    s = split(40, 3, val_days=60)
    assert s.val == range(0, s.n_train) and "validating on all of it" in caplog.text
    assert s.fit == s.val


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 40), st.integers(0, 300), st.integers(1, 40))
def test_every_target_day_in_exactly_one_split(T_in, extra, val_days):
    T = T_in + 8 + extra
    s = split(T, T_in, val_days)
    assume(s.n_train > val_days)  # otherwise validation deliberately reuses the training days
    seen = {}
    for name in ("fit", "val", "test"):
        for t in s.target_days(name, T_in):
            assert t not in seen
            seen[t] = name
    assert sorted(seen) == list(range(T_in, T))
    assert max((t for t, n in seen.items() if n != "test"), default=-1) < s.test.start


# -- metrics --------------------------------------------------------------------

def test_metric_examples():
    m = mae_mape([[0.0, 2.0]], [[1.0, 1.0]])
    assert m["MAE"] == 1.0 and m["MAPE"] == 0.5 and m["mape_excluded_entries"] == 1
    y = np.array([[1.0, 3.0], [0.0, 0.0]])
    m = mae_mape(y, y)
    assert m["MAE"] == 0.0 and m["MAPE"] == 0.0 and m["mape_excluded_days"] == 1
    with pytest.raises(ValueError):
        mae_mape(np.zeros((2, 3)), np.zeros((3, 2)))


def loop_oracle(y, yhat):
    maes, mapes = [], []
    for d in range(len(y)):
        errs = [abs(a - b) for a, b in zip(y[d], yhat[d])]
        maes.append(sum(errs) / len(errs))
        ratios = [abs(a - b) / a for a, b in zip(y[d], yhat[d]) if a > 0]
        if ratios:
            mapes.append(sum(ratios) / len(ratios))
    return sum(maes) / len(maes), (sum(mapes) / len(mapes) if mapes else math.nan)


def test_metrics_match_loop_oracle():
    rng = np.random.default_rng(0)
    for _ in range(200):
        shape = tuple(rng.integers(1, 7, 2))
        y = rng.poisson(rng.uniform(0, 3), shape).astype(float)
        yhat = rng.normal(1.0, 1.5, shape)
        mae, mape = loop_oracle(y.tolist(), yhat.tolist())
        got = mae_mape(y, yhat)
        assert abs(got["MAE"] - mae) <= 1e-12
        assert (math.isnan(mape) and math.isnan(got["MAPE"])) or abs(got["MAPE"] - mape) <= 1e-12


# -- tasks and training -----------------------------------------------------------

def test_tasks_windows_and_unknown_entity(poisson_city):
    tasks = build_tasks([poisson_city], ENTITY_MAP, 3, val_days=10)
    assert [t.name for t in tasks] == ["p/Theft", "p/Battery"]
    t = tasks[0]
    assert t.windows["fit"][0] == 3 and t.windows["val"][-1] + 1 == t.windows["test"][0]
    X, Y = t.batch(t.windows["test"][:2])
    assert X.shape == (2, 3, 9, 2) and Y.shape == (2, 9)
    np.testing.assert_allclose(t.to_counts(t.to_normalised(Y)), Y, atol=1e-12)
    with pytest.raises(KeyError):
        build_tasks([poisson_city], {"Theft": 0}, 3)
    # city-qualified keys win over bare labels
    tasks = build_tasks([poisson_city], {**ENTITY_MAP, "p/Theft": 2}, 3, val_days=10)
    assert tasks[0].entity_id == 2


def test_run_config_validation():
    for bad in (dict(epochs=0), dict(lr=0.0), dict(ablation="none"), dict(backbone="gcn"), dict(loss_mode="max")):
        with pytest.raises(ValueError):
            RunConfig(**bad)


def test_final_bias_descends_on_a_convex_toy():
    # zero targets, head reduced to its final bias: loss = b2^2
    tensor, graph = make_city(np.zeros((40, 4, 1), dtype=int), "z", ["Theft"])
    tasks = build_tasks([(tensor, graph)], ENTITY_MAP, 3, recipe="raw", val_days=5)
    model, cfg = tiny_model(tasks, epochs=60, lr=0.01)
    model.params["head.W1"].data[...] = 0.0
    model.params["hyper.b1"].data[32:] = -1.0
    model.params["head.b2"].data[...] = 2.0
    for name, t in model.params.items():
        t.requires_grad = name == "head.b2"
    res = train(model, tasks, cfg)
    losses = [r["loss"] for r in res.log]
    assert losses[0] == pytest.approx(4.0, rel=0.05)
    assert all(b < a for a, b in zip(losses, losses[1:]))
    assert losses[-1] < 0.25 * losses[0]


def test_training_is_deterministic(poisson_city):
    runs = []
    for _ in range(2):
        tasks = build_tasks([poisson_city], ENTITY_MAP, 3, val_days=10)
        model, cfg = tiny_model(tasks, seed=5)
        res = train(model, tasks, cfg)
        runs.append((res.log, {k: v.tobytes() for k, v in model.params.state_dict().items()}))
    assert runs[0] == runs[1]
    assert res.steps == 2 * 2 * 1 and len(res.log) == 4
    assert {"epoch", "task", "loss", "sse", "windows", "val_mae"} <= set(res.log[0])


def test_poisoned_test_period_leaves_training_unchanged(poisson_city):
    tensor, graph = poisson_city
    poisoned = tensor.counts.copy()
    poisoned[split(tensor.n_days, 3, 10).test] = 999
    bad = make_city(poisoned, "p", ["Theft", "Battery"])
    logs = []
    for city in (poisson_city, bad):
        tasks = build_tasks([city], ENTITY_MAP, 3, val_days=10)
        model, cfg = tiny_model(tasks, seed=1)
        logs.append(train(model, tasks, cfg).log)
    assert logs[0] == logs[1]


def test_best_validation_state_is_restored(poisson_city):
    tasks = build_tasks([poisson_city], ENTITY_MAP, 3, val_days=10)
    model, cfg = tiny_model(tasks, epochs=4)
    res = train(model, tasks, cfg)
    val = evaluate(model, tasks, "val")
    assert np.mean([m["MAE"] for m in val.values()]) == pytest.approx(res.best_val_mae, abs=1e-12)
    assert res.best_val_mae == min(np.mean([r["val_mae"] for r in res.log if r["epoch"] == e]) for e in range(1, 5))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_values_abort_with_diagnostics(poisson_city):
    tasks = build_tasks([poisson_city], ENTITY_MAP, 3, val_days=10)
    model, cfg = tiny_model(tasks)
    model.params["head.W2"].data[...] = 1e308
    with pytest.raises(TrainingDiverged, match="parameter norms"):
        train(model, tasks, cfg)


# -- experiments ----------------------------------------------------------------

def test_variant_embeddings():
    Z = np.random.default_rng(0).normal(2.0, 3.0, (500, 4))
    assert variant_embeddings("full", Z, 0) is Z
    G = variant_embeddings("no_kg", Z, 0)
    np.testing.assert_allclose(G.mean(axis=0), Z.mean(axis=0), atol=0.5)
    np.testing.assert_allclose(G.std(axis=0), Z.std(axis=0), rtol=0.15)
    np.testing.assert_array_equal(G, gaussian_like(Z, 0))
    with pytest.raises(ValueError):
        variant_embeddings("no_kg", Z, 0, np.zeros((3, 4)))
    with pytest.raises(ValueError):
        variant_embeddings("random", Z, 0)


def test_ablate_runs_every_variant_on_shared_tasks(poisson_city):
    Z = np.random.default_rng(0).normal(size=(3, 16))
    res = ablate([poisson_city], ENTITY_MAP, Z, RunConfig(**TINY))
    assert list(res) == ["full", "no_kg", "no_hypernet"]
    rows = comparison_rows(res, "variant")
    assert [r["variant"] for r in rows] == list(res)
    assert all({"MAE", "MAPE", "MAE[p/Theft]"} <= set(r) for r in rows)
    assert res["no_hypernet"].model.params["backbone.W_in"].shape == (18, 32)


def test_swap_backbone_rows(poisson_city):
    Z = np.random.default_rng(0).normal(size=(3, 16))
    res = swap_backbone([poisson_city], ENTITY_MAP, Z, RunConfig(**TINY))
    rows = comparison_rows(res, "backbone")
    assert [r["backbone"] for r in rows] == ["a3tgcn", "tgcn"]
    assert all(np.isfinite([r["MAE"], r["MAPE"]]).all() for r in rows)
    with pytest.raises(ValueError):
        swap_backbone([poisson_city], ENTITY_MAP, Z, RunConfig(**TINY), ["dcrnn"])


def test_sweep_cells_rows_and_failures(poisson_city):
    def embed(d):
        if d == 64:
            raise RuntimeError("no table")
        return np.random.default_rng(d).normal(size=(3, d))

    cfg = RunConfig(**{**TINY, "epochs": 1})
    rows = sweep([poisson_city], ENTITY_MAP, embed, cfg)
    assert [r["embed_dim"] for r in rows] == [4, 8, 16, 32, 64, 128, 256]
    assert set(SWEEP_FIELDS) <= set(rows[0])
    failed = [r for r in rows if r["status"] != "ok"]
    assert len(failed) == 1 and failed[0]["embed_dim"] == 64 and "no table" in failed[0]["status"]
    alone = run_experiment([poisson_city], ENTITY_MAP, embed(8), RunConfig(**{**TINY, "epochs": 1, "embed_dim": 8}))
    assert rows[1]["MAE"] == alone.mean_mae and rows[1]["MAPE"] == alone.mean_mape
    again = sweep([poisson_city], ENTITY_MAP, embed, cfg, dims=(8,))
    assert again[0]["MAE"] == rows[1]["MAE"]


def test_metrics_files_are_deterministic(tmp_path, poisson_city):
    Z = np.random.default_rng(0).normal(size=(3, 16))
    for name in ("a", "b"):
        res = run_experiment([poisson_city], ENTITY_MAP, Z, RunConfig(**TINY))
        write_metrics(tmp_path / name, res)
    for f in ("metrics.json", "metrics.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert b"runtime" not in (tmp_path / "a" / "metrics.json").read_bytes()
    assert config_hash(RunConfig(**TINY)) == config_hash(RunConfig(**TINY)) != config_hash(RunConfig())


# -- synthetic cities ----------------------------------------------------------

def test_synth_zero_base_gives_zeros(snapshot_kg):
    sc = synth_cities(0, snapshot_kg, n_days=30, base_scale=0.0)
    assert all(c.counts.sum() == 0 for c in sc.cities)


def test_synth_is_deterministic_and_labels_disjoint(snapshot_kg):
    a, b = synth_cities(4, snapshot_kg, n_days=60), synth_cities(4, snapshot_kg, n_days=60)
    for x, y in zip(a.cities, b.cities):
        np.testing.assert_array_equal(x.counts, y.counts)
    assert a.params == b.params
    A, B = a.cities
    assert not set(A.crime_types) & set(B.crime_types)
    assert A.crime_types == ["Larceny", "Assault"] and B.crime_types == ["Theft", "Battery"]
    kg_edges = snapshot_kg.undirected_edges()
    for la, lb in zip(A.crime_types, B.crime_types):
        ia, ib = a.entity_map[f"synth_A/{la}"], a.entity_map[f"synth_B/{lb}"]
        assert (min(ia, ib), max(ia, ib)) in kg_edges


def test_synth_related_pairs_correlate(snapshot_kg):
    sc = synth_cities(0, snapshot_kg)
    A, B = (c.counts.sum(axis=1).astype(float) for c in sc.cities)
    related = [np.corrcoef(A[:, g], B[:, g])[0, 1] for g in range(2)]
    unrelated = [np.corrcoef(A[:, 0], B[:, 1])[0, 1], np.corrcoef(A[:, 1], B[:, 0])[0, 1]]
    assert min(related) > max(unrelated)


def test_synth_rejects_thin_kg_and_bad_params(snapshot_kg):
    thin = KnowledgeGraph([Entity(0, "Theft", "crime_type"), Entity(1, "Larceny", "crime_type"),
                           Entity(2, "Act", "legal_code")], [Triple(0, "relatedTo", 1), Triple(0, "definedBy", 2)])
    assert related_pairs(thin, 1) == [(1, 0)] or related_pairs(thin, 1) == [(0, 1)]
    with pytest.raises(SynthError):
        synth_cities(0, thin, n_days=20)
    with pytest.raises(SynthError):
        synth_cities(0, snapshot_kg, weekend_effect=(-1.0, 0.0))
    with pytest.raises(SynthError):
        synth_cities(0, snapshot_kg, city_scale=(1.0,))
