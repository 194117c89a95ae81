import csv
import json
from pathlib import Path

import pytest
import tomli_w

from hystl.cli import main
from hystl.crimekg import snapshot_dir

SMALL_EMBED = {"walks_per_node": 2, "walk_length": 6, "epochs": 1}
SMALL_TRAIN = {"epochs": 2, "snapshots_per_epoch": 8, "batch_size": 4, "T_in": 3, "val_days": 10}


def write_toml(path: Path, doc: dict) -> str:
    path.write_text(tomli_w.dumps(doc))
    return str(path)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    synth_cfg = write_toml(root / "synth.toml", {"synth": {"n_days": 60}})
    assert main(["synth", "--seed", "0", "--config", synth_cfg, "--out", str(root / "synth")]) == 0
    emb_cfg = write_toml(root / "emb.toml", {"embedding": SMALL_EMBED})
    assert main(["embed-kg", "--config", emb_cfg, "--out", str(root / "emb")]) == 0
    run_cfg = write_toml(root / "run.toml", {
        "data": {"synth": str(root / "synth")},
        "embedding": {"dir": str(root / "emb" / "embedding")},
        "train": SMALL_TRAIN,
    })
    return root, run_cfg


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def test_synth_outputs(workspace):
    root, _ = workspace
    doc = json.loads((root / "synth" / "entity_map.json").read_text())
    assert doc["cities"] == ["synth_A", "synth_B"]
    assert (root / "synth" / "synth_A" / "counts.bin").is_file()
    assert json.loads((root / "synth" / "synth_params.json").read_text())["n_days"] == 60
    manifest = json.loads((root / "synth" / "run_manifest.json").read_text())
    assert manifest["seed"] == 0 and manifest["command"] == "synth"


def test_train_twice_gives_identical_metrics(workspace):
    root, cfg = workspace
    for name in ("t1", "t2"):
        assert main(["train", "--seed", "3", "--config", cfg, "--out", str(root / name)]) == 0
    a, b = root / "t1", root / "t2"
    for f in ("metrics.json", "metrics.csv", "train_log.jsonl", "effective_config.toml"):
        assert (a / f).read_bytes() == (b / f).read_bytes(), f
    for f in ("params.bin", "model_manifest.json"):
        assert (a / "checkpoint" / f).read_bytes() == (b / "checkpoint" / f).read_bytes()
    m1 = json.loads((a / "run_manifest.json").read_text())
    assert m1["seed"] == 3 and m1["command"] == "train" and m1["input_hashes"]
    assert {"started", "finished", "tool_version", "config_hash"} <= set(m1)


def test_effective_config_records_overrides(workspace):
    root, cfg = workspace
    out = root / "over"
    assert main(["train", "--seed", "4", "--backbone", "tgcn", "--config", cfg, "--out", str(out)]) == 0
    import tomli
    eff = tomli.loads((out / "effective_config.toml").read_text())
    assert eff["seed"] == 4 and eff["train"]["seed"] == 4 and eff["train"]["backbone"] == "tgcn"
    assert json.loads((out / "metrics.json").read_text())["config"]["backbone"] == "tgcn"


def test_eval_reproduces_training_metrics(workspace):
    root, _ = workspace
    out = root / "ev"
    assert main(["eval", "--checkpoint", str(root / "t1" / "checkpoint"), "--out", str(out)]) == 0
    trained = json.loads((root / "t1" / "metrics.json").read_text())["tasks"]
    evaluated = json.loads((out / "metrics.json").read_text())["tasks"]
    assert {k: v["MAE"] for k, v in trained.items()} == {k: v["MAE"] for k, v in evaluated.items()}


def test_eval_without_checkpoint_is_exit_2(workspace, capsys):
    root, cfg = workspace
    assert main(["eval", "--config", cfg, "--out", str(root / "ev2")]) == 2
    assert "checkpoint" in capsys.readouterr().err
    assert main(["eval", "--checkpoint", str(root / "nope"), "--out", str(root / "ev3")]) == 2


def test_missing_inputs_are_exit_2(workspace, tmp_path):
    root, _ = workspace
    assert main(["train", "--seed", "0", "--config", str(tmp_path / "absent.toml"), "--out", str(tmp_path / "a")]) == 2
    cfg = write_toml(tmp_path / "c.toml", {"data": {"cities": [str(tmp_path / "no_city")]}})
    assert main(["train", "--seed", "0", "--config", cfg, "--out", str(tmp_path / "b")]) == 2
    assert main(["report", "--out", str(tmp_path / "r")]) == 2


def test_invariant_violations_are_exit_3(workspace, tmp_path, capsys):
    root, _ = workspace
    kg_dir = tmp_path / "kg"
    kg_dir.mkdir()
    for name in ("entities.tsv", "triples.tsv"):
        (kg_dir / name).write_bytes((snapshot_dir() / name).read_bytes())
    with open(kg_dir / "triples.tsv", "a") as f:
        f.write("0\trelatedTo\t4242\n")
    cfg = write_toml(tmp_path / "bad_kg.toml", {"kg": {"dir": str(kg_dir)}, "data": {"synth": str(root / "synth")}})
    assert main(["train", "--seed", "0", "--config", cfg, "--out", str(tmp_path / "x")]) == 3
    assert "dangling" in capsys.readouterr().err
    cfg = write_toml(tmp_path / "bad_train.toml", {"data": {"synth": str(root / "synth")}, "train": {"epochz": 3}})
    assert main(["train", "--seed", "0", "--config", cfg, "--out", str(tmp_path / "y")]) == 3


def test_unmapped_labels_fail_unless_allowed(workspace, tmp_path):
    import numpy as np
    from datetime import date
    from hystl.cli import save_city
    from hystl.geogrid import CrimeTensor, GridSpec
    from hystl.stgraph import build_adjacency

    counts = np.random.default_rng(0).poisson(2.0, (50, 4, 2))
    tensor = CrimeTensor(counts, date(2021, 1, 1), [(0, 0), (0, 1), (1, 0), (1, 1)], ["THEFT", "KITE FLYING"], "town")
    save_city(tmp_path / "town", tensor, build_adjacency(GridSpec(0, 0, 2, 2, 0)))
    root, _ = workspace
    doc = {"data": {"cities": [str(tmp_path / "town")]}, "embedding": {"dir": str(root / "emb" / "embedding")},
           "train": SMALL_TRAIN}
    cfg = write_toml(tmp_path / "town.toml", doc)
    assert main(["train", "--seed", "0", "--config", cfg, "--out", str(tmp_path / "u1")]) == 3
    assert main(["train", "--seed", "0", "--allow-unmapped", "--config", cfg, "--out", str(tmp_path / "u2")]) == 0
    assert list(json.loads((tmp_path / "u2" / "metrics.json").read_text())["tasks"]) == ["town/THEFT"]


def test_city_filter(workspace):
    root, cfg = workspace
    out = root / "only_b"
    assert main(["train", "--seed", "0", "--city", "synth_B", "--config", cfg, "--out", str(out)]) == 0
    tasks = json.loads((out / "metrics.json").read_text())["tasks"]
    assert sorted(tasks) == ["synth_B/Battery", "synth_B/Theft"]
    assert main(["train", "--seed", "0", "--city", "synth_Z", "--config", cfg, "--out", str(root / "zz")]) == 2


def test_ablate_then_report_matches_metric_files(workspace):
    root, cfg = workspace
    out = root / "abl"
    assert main(["ablate", "--seed", "1", "--config", cfg, "--out", str(out)]) == 0
    variants = ["full", "no_kg", "no_hypernet"]
    assert [r["variant"] for r in read_csv(out / "comparison.csv")] == variants
    for v in variants:
        assert (out / v / "run_manifest.json").is_file()
    rep = root / "rep"
    assert main(["report", "--out", str(rep)] + [str(out / v) for v in variants]) == 0
    rows = read_csv(rep / "report.csv")
    assert [r["variant"] for r in rows] == variants
    for r in rows:
        doc = json.loads((out / r["variant"] / "metrics.json").read_text())
        for task, m in doc["tasks"].items():
            assert float(r[f"MAE[{task}]"]) == m["MAE"]
        assert float(r["mean_MAE"]) == pytest.approx(doc["mean_MAE"], abs=1e-12)
    assert len(read_csv(rep / "report_long.csv")) == 3 * 4


def test_sweep_writes_one_row_per_cell(workspace, tmp_path):
    root, _ = workspace
    cfg = write_toml(tmp_path / "sw.toml", {"data": {"synth": str(root / "synth")}, "embedding": SMALL_EMBED,
                                             "train": {**SMALL_TRAIN, "epochs": 1}, "sweep": {"dims": [4, 8], "lrs": [0.01, 0.02]}})
    assert main(["sweep", "--seed", "0", "--config", cfg, "--out", str(tmp_path / "sw")]) == 0
    rows = read_csv(tmp_path / "sw" / "sweep.csv")
    assert [(r["embed_dim"], r["lr"]) for r in rows] == [("4", "0.01"), ("4", "0.02"), ("8", "0.01"), ("8", "0.02")]
    assert all(r["status"] == "ok" for r in rows)


def test_build_kg_regenerates_the_bundled_snapshot(tmp_path):
    assert main(["build-kg", "--offline", "--out", str(tmp_path)]) == 0
    for name in ("entities.tsv", "triples.tsv"):
        assert (tmp_path / "kg" / name).read_bytes() == (snapshot_dir() / name).read_bytes()
    stats = json.loads((tmp_path / "kg_stats.json").read_text())
    assert stats["n_nodes"] == 68 and stats["avg_degree"] == 2 * stats["n_edges"] / 68


def test_ingest_writes_city_directory(tmp_path):
    src = tmp_path / "inc.csv"
    src.write_text("when,la,lo,kind\n2020-01-01,41.80,-87.70,THEFT\n2020-01-02,41.85,-87.65,BATTERY\n"
                   "2020-01-04,41.82,-87.66,THEFT\nbad,41.8,-87.7,THEFT\n")
    cfg = write_toml(tmp_path / "i.toml", {"ingest": {"csv": str(src), "city_id": "chi", "column_map": {
        "timestamp": "when", "lat": "la", "lon": "lo", "label": "kind"}}})
    assert main(["ingest", "--config", cfg, "--out", str(tmp_path / "out")]) == 0
    summary = json.loads((tmp_path / "out" / "ingest_summary.json").read_text())
    assert summary["retained"] == 3 and summary["total_rows"] == 4
    assert (tmp_path / "out" / "chi" / "graph.json").is_file()
    assert main(["ingest", "--config", write_toml(tmp_path / "e.toml", {}), "--out", str(tmp_path / "o2")]) == 2


def test_seed_is_mandatory_for_training_commands(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--out", "unused"])
    assert exc.value.code == 2
