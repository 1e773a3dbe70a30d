import csv
import json
import math

import numpy as np
import pytest

from bcr import io
from bcr.cli import main
from bcr.harness import (
    COLUMNS, RunConfig, SweepResult, emit_results, load_run_config, normalize, read_results, run_sweep,
)
from bcr.offline import load_dataset

TINY = "S..\n.C.\n..G\n"
CORRIDOR = "CCC\nCSC\nCCG\n"  # every first move enters a cost cell


@pytest.fixture
def tiny(tmp_path):
    p = tmp_path / "tiny.grid"
    p.write_text(TINY)
    return str(p)


def test_normalize_examples():
    assert normalize(5, 0, 10) == 0.5
    assert normalize(3, 3, 10) == 0.0
    assert normalize(4.0, 0.0, 2.0) == 2.0
    with pytest.raises(ValueError):
        normalize(1, 2, 2)


def test_config_validation():
    with pytest.raises(ValueError):
        RunConfig(kappas=())
    with pytest.raises(ValueError):
        RunConfig(methods=("lp", "magic"))
    with pytest.raises(ValueError):
        RunConfig(horizon=0)
    with pytest.raises(ValueError):
        RunConfig(reward_bounds=(1.0, 1.0))


def test_config_from_ini(tmp_path, tiny):
    p = tmp_path / "run.ini"
    p.write_text(f"[sweep]\nlayout = {tiny}\nkappas = 1, 2\nps = 0.9\nmethods = lp unconstrained\n"
                 "[budget]\nbins = 32\nmode = direct\n[train]\nsteps = 10\n")
    cfg = load_run_config(p, seeds=(3,))
    assert cfg.kappas == (1.0, 2.0) and cfg.ps == (0.9,) and cfg.seeds == (3,)
    assert cfg.bins == 32 and cfg.train.n_bins == 32 and cfg.train.budget_mode == "direct"
    assert cfg.train.steps == 10
    p.write_text("[sweep]\nflux = 3\n")
    with pytest.raises(ValueError, match="flux"):
        load_run_config(p)


def _sweep(layout, **kw):
    base = dict(layout=layout, ps=(0.8, 1.0), kappas=(0.5, 3.0), bins=64,
                methods=("lp", "bamdp-direct", "bamdp-soft", "unconstrained"))
    base.update(kw)
    return run_sweep(RunConfig(**base))


def test_sweep_cardinality_and_semantics(tiny):
    res = _sweep(tiny, seeds=(0, 1))
    assert len(res.rows) == 4 * 2 * 2 * 2
    assert res.n_failed == 0
    for r in res.rows:
        if r["status"] != "ok":
            continue
        assert (r["normalized_cost"] > 1) == (r["j_cost"] > r["kappa"])
        if r["method"] in ("bamdp-direct", "bamdp-soft"):
            assert r["j_cost"] <= r["kappa"] + 1e-6
        assert r["provenance"] == "exact"
    for p in (0.8, 1.0):
        for k in (0.5, 3.0):
            unc = res.select(method="unconstrained", p=p, kappa=k, seed=0)[0]
            lp = res.select(method="lp", p=p, kappa=k, seed=0)[0]
            soft = res.select(method="bamdp-soft", p=p, kappa=k, seed=0)[0]
            assert unc["status"] == "ok"
            if lp["status"] == "ok":
                assert unc["j_reward"] >= lp["j_reward"] - 1e-9
            if soft["status"] == "ok":
                assert lp["j_reward"] >= soft["j_reward"] - 1e-6


def test_infeasible_cells(tmp_path):
    path = tmp_path / "corridor.grid"
    path.write_text(CORRIDOR)
    res = _sweep(str(path), ps=(1.0,), kappas=(0.5,))
    for method in ("lp", "bamdp-direct", "bamdp-soft"):
        row = res.select(method=method)[0]
        assert row["status"] == "infeasible"
        assert math.isnan(row["j_reward"])
    assert res.select(method="unconstrained")[0]["status"] == "ok"
    assert res.n_failed == 0


def test_unconstrained_may_exceed_threshold(tmp_path):
    path = tmp_path / "corridor.grid"
    path.write_text(CORRIDOR)
    row = _sweep(str(path), ps=(1.0,), kappas=(0.5,), methods=("unconstrained",)).rows[0]
    assert row["status"] == "ok" and row["j_cost"] > 0.5 and row["normalized_cost"] > 1


def test_missing_layout_marks_cells_failed(tmp_path):
    res = _sweep(str(tmp_path / "nope.grid"), ps=(0.9,), kappas=(1.0,), methods=("lp",))
    assert res.n_failed == 1 and res.rows[0]["status"].startswith("error")


def test_emit_csv(tmp_path, tiny):
    out = tmp_path / "r.csv"
    emit_results(SweepResult(), out)
    assert out.read_bytes() == (",".join(COLUMNS) + "\n").encode()
    res = _sweep(tiny, ps=(1.0,), kappas=(3.0,), methods=("lp",))
    emit_results(res, out)
    raw = out.read_bytes()
    assert b"\r" not in raw
    lines = raw.decode("utf-8").splitlines()
    assert len(lines) == 2
    back = read_results(out)
    assert back.rows[0]["j_reward"] == res.rows[0]["j_reward"]


def test_emit_json(tmp_path, tiny):
    out = tmp_path / "r.json"
    res = _sweep(tiny, ps=(1.0,), kappas=(3.0,), methods=("lp", "unconstrained"))
    emit_results(res, out, "json")
    data = json.loads(out.read_text())
    assert len(data) == 2 and all(list(d) == list(COLUMNS) for d in data)
    with pytest.raises(ValueError):
        emit_results(res, out, "xml")


def test_offline_method_in_sweep(tiny):
    from bcr.offline import TrainConfig
    res = _sweep(tiny, ps=(0.9,), kappas=(1.0, 3.0), methods=("offline-bcrl",), episodes=500,
                 dataset_episodes=200, horizon=30, train=TrainConfig(steps=300, batch=64, n_bins=16))
    assert [r["status"] for r in res.rows] == ["ok", "ok"]
    assert all(r["provenance"] == "monte-carlo" and r["j_cost_se"] > 0 for r in res.rows)


# ---------------------------------------------------------------- CLI


def test_cli_solve_commands(tmp_path, tiny, capsys):
    assert main(["solve-lp", "--layout", tiny, "--p", "0.9", "--kappa", "1.0",
                 "--out", str(tmp_path / "s.json")]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["status"] == "optimal" and out["j_cost"] <= 1.0 + 1e-9
    assert io.load_solution(tmp_path / "s.json").status == "optimal"
    assert main(["solve-bamdp", "--layout", tiny, "--p", "0.9", "--kappa", "1.0", "--bins", "32",
                 "--out", str(tmp_path / "p.json")]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["mode"] == "soft" and out["j_cost"] <= 1.0 + 1e-6


def test_cli_dataset_and_training(tmp_path, tiny, capsys):
    data = tmp_path / "d.csv"
    assert main(["gen-dataset", "--layout", tiny, "--p", "0.9", "--episodes", "50", "--horizon", "20",
                 "--seed", "4", "--out", str(data)]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["records"] == len(load_dataset(data))
    assert main(["train-offline", "--layout", tiny, "--p", "0.9", "--dataset", str(data), "--steps", "100",
                 "--bins", "16", "--eval-kappa", "1,2", "--episodes", "200", "--horizon", "20"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert [e["kappa"] for e in out["evaluation"]] == [1.0, 2.0]


def test_cli_sweep_exit_codes(tmp_path, tiny):
    out = tmp_path / "r.csv"
    assert main(["sweep", "--layout", tiny, "--p", "1.0", "--kappa", "3", "--methods", "lp",
                 "--out", str(out)]) == 0
    with open(out, newline="") as fh:
        assert len(list(csv.reader(fh))) == 2
    assert main(["sweep", "--layout", str(tmp_path / "missing.grid"), "--p", "1.0", "--kappa", "3",
                 "--methods", "lp", "--out", str(out)]) == 2


def test_cli_fatal_errors(tmp_path):
    assert main(["solve-lp", "--layout", str(tmp_path / "missing.grid"), "--kappa", "1"]) == 1
    bad = tmp_path / "bad.grid"
    bad.write_text("SS\n.G\n")
    assert main(["solve-lp", "--layout", str(bad), "--kappa", "1"]) == 1
    with pytest.raises(SystemExit):
        main(["launch"])


def test_cli_config_file(tmp_path, tiny, capsys):
    cfg = tmp_path / "c.ini"
    cfg.write_text(f"[env]\nlayout = {tiny}\np = 1.0\ngamma = 0.9\nkappa = 2\n[budget]\nmode = direct\nbins = 16\n")
    assert main(["solve-bamdp", "--config", str(cfg)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert (out["mode"], out["bins"], out["kappa"]) == ("direct", 16, 2.0)


def test_cli_cmdp_file(tmp_path, capsys):
    from oracles import random_cmdp
    m = random_cmdp(np.random.default_rng(0), 4, 2, 0.9)
    io.save_cmdp(m, tmp_path / "m.json")
    assert main(["solve-lp", "--cmdp", str(tmp_path / "m.json")]) == 0
    assert json.loads(capsys.readouterr().out)["kappa"] == m.cost_threshold
