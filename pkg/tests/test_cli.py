import csv
import hashlib
import json
import logging

import numpy as np
import pytest

from camplace.cli import main
from camplace.scenes import shoebox_scene


def small_config(tmp_path, **solver):
    scene = tmp_path / "scene.json"
    scene.write_text(json.dumps(shoebox_scene(6.0, 5.0, 3.0)))
    cfg = {
        "scene": {"synthetic": "scene.json"},
        "candidates": {"yaw_step_deg": 120, "pitch_values_deg": [45]},
        "solver": {"methods": ["proposed-mip", "proposed-greedy", "greedy-binary", "zhao-mip"],
                   "budgets": [2, 4], "time_budget": 30, "node_limit": 2000, **solver},
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def digest_files(root):
    return {p.relative_to(root).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file() and p.name != "timing.jsonl"}


def test_ingest_shoebox(tmp_path, capsys):
    assert main(["ingest", "--scene", "shoebox", "--out", str(tmp_path / "o")]) == 0
    summary = json.loads((tmp_path / "o" / "grid.json").read_text())
    assert summary["dims"] == [40, 32, 12]
    assert summary["occupied_count"] > 0
    assert "scene" in summary["provenance"]


def test_missing_scene_path(tmp_path, capsys):
    assert main(["ingest", "--scene", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2
    assert "does not exist" in capsys.readouterr().err


def test_missing_config_file(tmp_path, capsys):
    assert main(["ingest", "--config", str(tmp_path / "nope.toml")]) == 2


def test_zero_voxel_size(tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["ingest", "--scene", "shoebox", "--voxel-size", "0", "--out", str(out)]) == 2
    assert not out.exists()


def test_no_targets_is_config_error(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"scene": {"synthetic": "shoebox"}, "targets": {"free_space": None}}))
    assert main(["ingest", "--config", str(path)]) == 2


def test_toml_config(tmp_path):
    path = tmp_path / "cfg.toml"
    path.write_text('voxel_size = 0.5\n[scene]\nsynthetic = "shoebox"\n')
    assert main(["ingest", "--config", str(path), "--out", str(tmp_path / "o")]) == 0
    assert json.loads((tmp_path / "o" / "grid.json").read_text())["dims"] == [20, 16, 6]


def test_solve_evaluate_and_export(tmp_path, capsys):
    cfg = small_config(tmp_path)
    out = tmp_path / "o"
    assert main(["solve", "--config", str(cfg), "--out", str(out)]) == 0
    rows = list(csv.DictReader((out / "sweep.csv").open()))
    assert len(rows) == 8
    by_method = {}
    for r in rows:
        by_method.setdefault(r["method"], []).append(float(r["coverage_gap"]))
    for gaps in by_method.values():
        assert gaps == sorted(gaps, reverse=True)

    sol_path = out / "solutions" / "proposed-mip_ns4.json"
    sol = json.loads(sol_path.read_text())
    assert "elapsed" not in json.dumps(sol)
    assert set(sol["provenance"]) == {"scene", "grid", "targets", "candidates", "visibility"}
    n_p = len(json.loads((out / "targets.json").read_text())["voxel_indices"])

    assert main(["evaluate", "--config", str(cfg), "--out", str(out), str(sol_path)]) == 0
    ev = json.loads((out / "solutions" / "proposed-mip_ns4_eval.json").read_text())
    assert ev["deficit_cost"] == sol["objective"] == sol["metrics"]["deficit_cost"]
    counts = list(csv.DictReader((out / "solutions" / ev["per_voxel_counts_path"]).open()))
    assert len(counts) == n_p
    assert {"x", "y", "z", "count"} <= set(counts[0])

    empty = dict(sol, selected=[])
    (tmp_path / "empty.json").write_text(json.dumps(empty))
    assert main(["evaluate", "--config", str(cfg), "--out", str(out), str(tmp_path / "empty.json")]) == 0
    assert json.loads((tmp_path / "empty_eval.json").read_text())["coverage_gap"] == 1.0

    stale = dict(sol, provenance=dict(sol["provenance"], visibility="0" * 64))
    (tmp_path / "stale.json").write_text(json.dumps(stale))
    assert main(["evaluate", "--config", str(cfg), "--out", str(out), str(tmp_path / "stale.json")]) == 2
    assert "visibility" in capsys.readouterr().err

    lp = tmp_path / "m.lp"
    assert main(["export-lp", "--config", str(cfg), "--out", str(out), "--budget", "3", "--lp", str(lp)]) == 0
    assert lp.read_text().startswith("\\ camplace")


def test_stage_cache_reused(tmp_path, caplog):
    cfg = small_config(tmp_path)
    out = tmp_path / "o"
    assert main(["visibility", "--config", str(cfg), "--out", str(out)]) == 0
    mtime = (out / "visibility.cpvm").stat().st_mtime_ns
    caplog.clear()
    with caplog.at_level(logging.INFO):
        assert main(["visibility", "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "visibility.cpvm").stat().st_mtime_ns == mtime
    assert any("reusing" in r.message for r in caplog.records)


def test_runs_are_byte_identical(tmp_path):
    cfg = small_config(tmp_path)
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "a"), "--threads", "1"]) == 0
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "b"), "--threads", "3"]) == 0
    a, b = digest_files(tmp_path / "a"), digest_files(tmp_path / "b")
    assert a == b and len(a) > 10


def test_budget_cap_warning(tmp_path, caplog):
    cfg = small_config(tmp_path)
    with caplog.at_level(logging.WARNING):
        assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "o"),
                     "--methods", "proposed-greedy", "--budgets", "500"]) == 0
    assert any("exceeds" in r.message for r in caplog.records)


def test_time_limit_flagged(tmp_path):
    cfg = small_config(tmp_path, node_limit=None)
    out = tmp_path / "o"
    assert main(["solve", "--config", str(cfg), "--out", str(out), "--methods", "proposed-mip",
                 "--budgets", "10", "--time-budget", "0.0001"]) == 0
    rows = list(csv.DictReader((out / "sweep.csv").open()))
    assert rows[0]["status"] == "time-limit-incumbent"


def test_bad_method_argument(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["solve", "--methods", "nope"])
    assert exc.value.code == 2


def test_point_cloud_scene(tmp_path):
    rng = np.random.default_rng(0)
    # floor and four walls of a 4 x 3 x 3 m room sampled as points
    floor = np.column_stack([rng.uniform(0, 4, 3000), rng.uniform(0, 3, 3000), np.zeros(3000)])
    walls = [np.column_stack([np.full(800, x), rng.uniform(0, 3, 800), rng.uniform(0, 3, 800)]) for x in (0, 4)]
    walls += [np.column_stack([rng.uniform(0, 4, 800), np.full(800, y), rng.uniform(0, 3, 800)]) for y in (0, 3)]
    pts = np.concatenate([floor, *walls])
    np.savetxt(tmp_path / "room.xyz", pts, fmt="%.4f")
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "scene": {"point_cloud": "room.xyz"},
        "candidates": {"yaw_step_deg": 180, "pitch_values_deg": [45]},
        "solver": {"methods": ["proposed-greedy"], "budgets": [3]},
    }))
    out = tmp_path / "o"
    assert main(["solve", "--config", str(cfg), "--out", str(out)]) == 0
    grid = json.loads((out / "grid.json").read_text())
    assert grid["dims"] == [16, 12, 12]
    rows = list(csv.DictReader((out / "sweep.csv").open()))
    assert float(rows[0]["coverage_gap"]) < 1.0
