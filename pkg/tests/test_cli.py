import json

import pytest

from fwlab.cli import main

OU = {"kind": "simulate", "name": "ou", "seed": 7, "drift": ["-x1"], "sigma": [["1"]], "eps": 0.5,
      "x0": [1.0], "dt": 0.01, "T": 1.0}


def write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def run(tmp_path, cfg, out="out", *extra):
    code = main(["run", write(tmp_path, cfg), "--out", str(tmp_path / out), *extra])
    report = tmp_path / out / "report.json"
    return code, (json.loads(report.read_text()) if report.exists() else None)


def test_simulate_writes_trajectory_and_report(tmp_path):
    code, rep = run(tmp_path, OU)
    assert code == 0
    assert (tmp_path / "out" / "trajectory.csv").read_text().startswith("t,")
    assert set(rep["artifacts"]) == {"trajectory.csv"}
    assert rep["kind"] == "simulate" and rep["seed"] == 7
    assert set(rep["versions"]) >= {"fwlab", "numpy", "scipy", "python"}


def test_rerun_gives_identical_hash_and_bytes(tmp_path):
    _, a = run(tmp_path, OU, "a")
    _, b = run(tmp_path, OU, "b")
    _, c = run(tmp_path, OU, "a")
    assert a["report_hash"] == b["report_hash"] == c["report_hash"]
    assert (tmp_path / "a" / "trajectory.csv").read_bytes() == (tmp_path / "b" / "trajectory.csv").read_bytes()
    _, d = run(tmp_path, OU, "d", "--seed", "8")
    assert d["report_hash"] != a["report_hash"] and d["seed"] == 8


def test_missing_seed_is_named(tmp_path, capsys):
    cfg = {k: v for k, v in OU.items() if k != "seed"}
    code, _ = run(tmp_path, cfg)
    assert code != 0
    assert "'seed'" in capsys.readouterr().err


def test_missing_nested_key_path(tmp_path, capsys):
    cfg = {"kind": "graph-solve", "seed": 1, "H": "x1^2+x2^2", "box": [-2, 2, -2, 2], "nx": 64,
           "cap": 1.0, "bvp": {"vertex_values": {}, "cuts": {"0": {"hi": [0.5, 1.0]}}, "n": "many"}}
    code, _ = run(tmp_path, cfg)
    assert code == 2
    assert "'bvp.n'" in capsys.readouterr().err


def test_unknown_kind_and_bad_expression(tmp_path, capsys):
    code, _ = run(tmp_path, {**OU, "kind": "plot"})
    assert code == 2 and "kind" in capsys.readouterr().err
    code, _ = run(tmp_path, {**OU, "drift": ["-x1 +"]})
    assert code == 2 and "ParseError" in capsys.readouterr().err


def test_failed_expectation_exits_nonzero(tmp_path):
    code, rep = run(tmp_path, {**OU, "expect": {"mean[0]": {"value": 100.0, "tol": 0.1}}})
    assert code == 1 and rep["passed"] is False


def test_threads_env_overrides_flag(tmp_path, monkeypatch):
    _, a = run(tmp_path, OU, "a", "--threads", "3")
    assert a["runtime"]["threads"] == 3
    monkeypatch.setenv("FWLAB_THREADS", "2")
    _, b = run(tmp_path, OU, "b", "--threads", "3")
    assert b["runtime"]["threads"] == 2
    assert a["report_hash"] == b["report_hash"]


def test_hierarchy_markov_and_front_pipelines(tmp_path):
    code, rep = run(tmp_path, {"kind": "hierarchy", "seed": 1, "V": [[0, 1], [2, 0]], "oracle_eps": 0.02,
                               "queries": [{"initial": 0, "lambda": 1.5}]}, "h")
    assert code == 0 and rep["metrics"]["state[0,1.5]"] == 1
    code, rep = run(tmp_path, {"kind": "markov", "seed": 1, "family": "eleven-state"}, "m")
    assert code == 0 and rep["metrics"]["n_classes"] == 3
    code, rep = run(tmp_path, {"kind": "front", "seed": 1, "box": [[-2, 2]], "hx": 0.02, "rate": "1",
                               "support": "abs(x)-0.5", "t": 0.5, "dt": 0.05}, "f")
    assert code == 0 and rep["metrics"]["front_cells"] > 50
    assert (tmp_path / "f" / "front.csv").exists()


def test_verify_filter_runs_one_fixture(tmp_path, capsys):
    out = tmp_path / "v"
    assert main(["verify", "--filter", "cauchy-predictors", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "PASS" in text and "FAIL" not in text
    agg = json.loads((out / "verify_report.json").read_text())
    assert list(agg["fixtures"]) == ["cauchy-predictors"]
    assert main(["verify", "--filter", "cauchy-predictors", "--out", str(out)]) == 0
    again = json.loads((out / "verify_report.json").read_text())
    assert again["report_hash"] == agg["report_hash"]


def test_verify_unknown_filter(tmp_path, capsys):
    assert main(["verify", "--filter", "no-such-fixture", "--out", str(tmp_path)]) == 2
    assert "no-such-fixture" in capsys.readouterr().err
