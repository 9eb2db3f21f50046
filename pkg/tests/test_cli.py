import json

import numpy as np
import pytest

from feederid.cli import DEFAULT_CONFIG, EXIT_CONFIG, EXIT_IO, EXIT_NUMERICAL, load_config, main
from feederid.feeder import load_feeder


def config(tmp_path, **over):
    cfg = {"feeder_path": "random:12", "data": {"synthetic": {"T": 200}}, "seed": 7}
    cfg.update(over)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def run(*args):
    return main([str(a) for a in args])


def test_generate_rows_and_determinism(tmp_path):
    cfg = config(tmp_path)
    assert run("generate", "--config", cfg, "--out", tmp_path / "a") == 0
    assert run("generate", "--config", cfg, "--out", tmp_path / "b") == 0
    for name in ("feeder.json", "p.csv", "q.csv", "v.csv", "partition.json", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    for name in ("p.csv", "q.csv", "v.csv"):
        assert len((tmp_path / "a" / name).read_text().splitlines()) == 1 + 201
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["seed"] == 7 and man["truth_known"] and set(man["outputs"]) >= {"v.csv", "p.csv"}
    assert load_feeder(tmp_path / "a" / "feeder.json").n_buses == 12


def test_seed_flag_changes_output(tmp_path):
    cfg = config(tmp_path)
    run("generate", "--config", cfg, "--out", tmp_path / "a")
    run("generate", "--config", cfg, "--out", tmp_path / "b", "--seed", 8)
    assert (tmp_path / "a" / "p.csv").read_bytes() != (tmp_path / "b" / "p.csv").read_bytes()


def test_no_changes_gives_constant_voltages(tmp_path):
    cfg = config(tmp_path, data={"synthetic": {"T": 20, "change_prob": 0.0}})
    run("generate", "--config", cfg, "--out", tmp_path / "g")
    rows = [line.split(",", 1)[1] for line in (tmp_path / "g" / "v.csv").read_text().splitlines()[1:]]
    assert len(set(rows)) == 1


def test_estimate_full_observability(tmp_path):
    part = {"fraction": 1.0, "voltage_observed": None}
    cfg = config(tmp_path, partition=part, truth_mode="LDF")
    run("generate", "--config", cfg, "--out", tmp_path / "g")
    assert run("estimate", "--config", cfg, "--bundle", tmp_path / "g", "--out", tmp_path / "e") == 0
    rep = json.loads((tmp_path / "e" / "report.json").read_text())
    assert rep["tve"] == rep["tve_zi"] and rep["iterations"] == 1
    rows = (tmp_path / "e" / "reactance.csv").read_text().splitlines()
    assert rows[0] == "line,from,to,x_true,x_am,x_zi" and len(rows) == 13


def test_estimate_partial_observability_beats_zi(tmp_path):
    cfg = config(tmp_path, feeder_path="bundled:radial12", truth_mode="LDF",
                 data={"synthetic": {"T": 400}}, seed=0,
                 hyperparameters={"lam": 3e-7, "max_inner_iters": 200})
    assert run("estimate", "--config", cfg, "--out", tmp_path / "e", "--dump-regression", 3) == 0
    rep = json.loads((tmp_path / "e" / "report.json").read_text())
    assert rep["tve"] < rep["tve_zi"]
    lines = (tmp_path / "e" / "regression_t3.csv").read_text().splitlines()
    assert lines[0].startswith("bus,x_1,") and len(lines) == 1 + 12
    man = json.loads((tmp_path / "e" / "manifest.json").read_text())
    assert "regression_t3.csv" in man["outputs"]


def test_cv_table_shape(tmp_path):
    cfg = config(tmp_path, data={"synthetic": {"T": 100}},
                 cv={"lambda_grid": [1e-8, 1e-7, 1e-6], "alpha_grid": [1e-6, 1e-5, 1e-4], "K": 3},
                 hyperparameters={"max_am_iters": 3, "max_inner_iters": 50})
    assert run("cv", "--config", cfg, "--out", tmp_path / "cv") == 0
    out = json.loads((tmp_path / "cv" / "cv.json").read_text())
    assert len(out["table"]) == 9 and all(len(r["fold_scores"]) == 3 for r in out["table"])
    assert sum(out["fold_sizes"]) == 100


def test_cv_single_pair(tmp_path):
    cfg = config(tmp_path, data={"synthetic": {"T": 60}},
                 cv={"lambda_grid": [3e-7], "alpha_grid": [2e-5], "K": 2},
                 hyperparameters={"max_am_iters": 3})
    run("cv", "--config", cfg, "--out", tmp_path / "cv")
    out = json.loads((tmp_path / "cv" / "cv.json").read_text())
    assert (out["lambda"], out["alpha"]) == (3e-7, 2e-5)


def test_validate_with_true_parameters(tmp_path):
    cfg = config(tmp_path)
    run("generate", "--config", cfg, "--out", tmp_path / "g")
    hold = config(tmp_path, data={"synthetic": {"T": 50}}, seed=99)
    run("generate", "--config", hold, "--out", tmp_path / "h")
    x = load_feeder(tmp_path / "g" / "feeder.json").x.tolist()
    (tmp_path / "true.json").write_text(json.dumps({"theta": x, "theta_zi": x, "mode": "RATIO_FIXED"}))
    # random:12 with a different seed is a different feeder, so validate on the training feeder
    (tmp_path / "h" / "feeder.json").write_bytes((tmp_path / "g" / "feeder.json").read_bytes())
    assert run("validate", "--config", cfg, "--report", tmp_path / "true.json",
               "--holdout", tmp_path / "h", "--out", tmp_path / "v") == 0
    rows = (tmp_path / "v" / "voltage_error.csv").read_text().splitlines()
    assert rows[0] == "t,am,zi" and len(rows) == 1 + 50
    assert all(float(a) == 0.0 and float(z) == 0.0 for _, a, z in (r.split(",") for r in rows[1:]))


def test_validate_after_estimate(tmp_path):
    cfg = config(tmp_path, feeder_path="bundled:radial12", seed=1, data={"synthetic": {"T": 400}},
                 hyperparameters={"lam": 3e-7, "max_inner_iters": 200})
    run("estimate", "--config", cfg, "--out", tmp_path / "e")
    hold = config(tmp_path, feeder_path="bundled:radial12", seed=2, data={"synthetic": {"T": 100}})
    run("generate", "--config", hold, "--out", tmp_path / "h")
    assert run("validate", "--config", cfg, "--report", tmp_path / "e" / "report.json",
               "--holdout", tmp_path / "h", "--out", tmp_path / "v") == 0
    err = np.loadtxt(tmp_path / "v" / "voltage_error.csv", delimiter=",", skiprows=1)
    assert err.shape == (100, 3) and err[:, 1].mean() <= err[:, 2].mean()


def test_powerflow_command(tmp_path):
    cfg = config(tmp_path, data={"synthetic": {"T": 10}})
    assert run("powerflow", "--config", cfg, "--out", tmp_path / "pf") == 0
    ac = np.loadtxt(tmp_path / "pf" / "v_ac.csv", delimiter=",", skiprows=1)
    ldf = np.loadtxt(tmp_path / "pf" / "v_ldf.csv", delimiter=",", skiprows=1)
    assert ac.shape == ldf.shape == (11, 13)
    man = json.loads((tmp_path / "pf" / "manifest.json").read_text())
    assert man["max_mismatch"] <= 1e-8


def test_exit_codes(tmp_path, capsys):
    bad_key = tmp_path / "bad.json"
    bad_key.write_text(json.dumps({"nonsense": 1}))
    assert run("generate", "--config", bad_key, "--out", tmp_path / "x") == EXIT_CONFIG
    both = config(tmp_path, data={"synthetic": {"T": 5}, "bundle": "x"})
    assert run("generate", "--config", both, "--out", tmp_path / "x") == EXIT_CONFIG
    missing = config(tmp_path, data={"bundle": str(tmp_path / "nowhere")})
    assert run("estimate", "--config", missing, "--out", tmp_path / "x") == EXIT_IO
    heavy = config(tmp_path, data={"synthetic": {"T": 5, "magnitude": [0.5, 4.0], "load_max": 8.0}},
                   feeder_path="random:40")
    assert run("powerflow", "--config", heavy, "--out", tmp_path / "x") == EXIT_NUMERICAL
    assert run("estimate", "--config", config(tmp_path), "--threads", 0) == EXIT_CONFIG
    assert run("estimate", "--config", config(tmp_path), "--out", tmp_path / "x",
               "--dump-regression", 999) == EXIT_CONFIG
    capsys.readouterr()


def test_defaults_round_trip(capsys):
    assert main(["defaults"]) == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed == json.loads(json.dumps(DEFAULT_CONFIG))
    assert load_config()["hyperparameters"] == DEFAULT_CONFIG["hyperparameters"]
    with pytest.raises(SystemExit):
        main(["frobnicate"])
