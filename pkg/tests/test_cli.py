import json

import numpy as np
import pandas as pd
import pytest

from scpc.cli import main


@pytest.fixture()
def toy_csv(tmp_path):
    rng = np.random.default_rng(0)
    n = 40
    frame = pd.DataFrame(
        {
            "lon": rng.random(n),
            "lat": rng.random(n),
            "y": rng.standard_normal(n),
            "x": rng.standard_normal(n),
            "z1": rng.standard_normal(n),
        }
    )
    path = tmp_path / "toy.csv"
    frame.to_csv(path, index=False)
    return str(path)


def run_cli(capsys, argv):
    code = main(argv)
    out = capsys.readouterr().out
    return code, (json.loads(out) if out.strip() else None)


def test_estimate_happy_path(capsys, toy_csv):
    code, payload = run_cli(
        capsys,
        ["estimate", "--data", toy_csv, "--y-col", "y", "--coord-cols", "lon,lat",
         "--rho0", "0.02", "--q-max", "8"],
    )
    assert code == 0
    assert payload["schema"] == "scpc/1"
    res = payload["result"]
    assert res["ci"][0] < res["mean"] < res["ci"][1]
    for key in ("q", "cv", "c0", "sigma_hat", "se"):
        assert key in res
    assert payload["config"]["seed"] == 20210201


def test_estimate_missing_column(capsys, toy_csv):
    code, _ = run_cli(
        capsys,
        ["estimate", "--data", toy_csv, "--y-col", "nope", "--coord-cols", "lon,lat"],
    )
    assert code == 2


def test_missing_required_flag_exits_2(capsys, toy_csv):
    assert main(["estimate", "--data", toy_csv, "--coord-cols", "lon,lat"]) == 2


def test_controls_require_x_col(capsys, toy_csv):
    code, _ = run_cli(
        capsys,
        ["estimate", "--data", toy_csv, "--y-col", "y", "--coord-cols", "lon,lat",
         "--controls", "z1"],
    )
    assert code == 2


def test_estimate_missing_file(capsys):
    code, _ = run_cli(
        capsys, ["estimate", "--data", "/definitely/not/here.csv", "--y-col", "y", "--coord-cols", "a,b"]
    )
    assert code == 2


def test_calibrate(capsys, toy_csv):
    code, payload = run_cli(
        capsys, ["calibrate", "--data", toy_csv, "--coord-cols", "lon,lat", "--rho0", "0.10"]
    )
    assert code == 0
    assert payload["result"]["c0"] > 0
    curve = payload["result"]["rho_curve"]
    assert len(curve) == 41
    rhos = [row["rho_bar"] for row in curve]
    assert all(a >= b for a, b in zip(rhos, rhos[1:]))


def test_estimate_regression_block(capsys, toy_csv):
    code, payload = run_cli(
        capsys,
        ["estimate", "--data", toy_csv, "--y-col", "y", "--coord-cols", "lon,lat",
         "--x-col", "x", "--controls", "z1", "--q-max", "8"],
    )
    assert code == 0
    reg = payload["regression"]
    assert len(reg["scores"]) == 40
    assert abs(np.mean(reg["scores"]) - reg["beta_hat"]) < 1e-10
    assert payload["result"]["mean"] == pytest.approx(reg["beta_hat"])


def test_estimate_out_file(capsys, toy_csv, tmp_path):
    out = tmp_path / "res.json"
    code = main(
        ["estimate", "--data", toy_csv, "--y-col", "y", "--coord-cols", "lon,lat",
         "--q-max", "6", "--out", str(out)]
    )
    assert code == 0
    payload = json.loads(out.read_text())
    assert payload["command"] == "estimate"


def test_estimate_reproducible_from_echoed_config(capsys, toy_csv):
    argv = ["estimate", "--data", toy_csv, "--y-col", "y", "--coord-cols", "lon,lat", "--q-max", "6"]
    _, first = run_cli(capsys, argv)
    cfg = first["config"]
    rebuilt = [
        "estimate", "--data", cfg["data"], "--y-col", cfg["y_col"],
        "--coord-cols", cfg["coord_cols"], "--rho0", str(cfg["rho0"]),
        "--alpha", str(cfg["alpha"]), "--family", cfg["family"],
        "--q-max", str(cfg["q_max"]), "--grid-size", str(cfg["grid_size"]),
        "--nystrom", cfg["nystrom"], "--seed", str(cfg["seed"]),
    ]
    _, second = run_cli(capsys, rebuilt)
    assert first["result"] == second["result"]


def test_certify_runs(capsys, toy_csv):
    code = main(
        ["certify", "--data", toy_csv, "--coord-cols", "lon,lat", "--rho0", "0.05",
         "--q-max", "6", "--grid-points", "8"],
    )
    captured = capsys.readouterr()
    assert code == 0
    payload = json.loads(captured.out)
    res = payload["result"]
    assert res["rho_lower"] <= res["rho0"] <= res["rho_upper"]
    assert res["q"] >= 1 and res["cv"] > 0
    # human-readable table goes to stderr
    assert "certified average-correlation range" in captured.err
    assert "feasible" in captured.err


def test_numeric_error_exit_code(capsys, tmp_path):
    rng = np.random.default_rng(1)
    n = 30
    frame = pd.DataFrame({"lon": rng.random(n), "lat": rng.random(n), "y": np.ones(n)})
    path = tmp_path / "const.csv"
    frame.to_csv(path, index=False)
    code, _ = run_cli(
        capsys,
        ["estimate", "--data", str(path), "--y-col", "y", "--coord-cols", "lon,lat",
         "--q-max", "5"],
    )
    assert code == 3


def test_ftest_runs(capsys, tmp_path):
    rng = np.random.default_rng(5)
    n = 50
    frame = pd.DataFrame(
        {"lon": rng.random(n), "lat": rng.random(n),
         "y1": rng.standard_normal(n), "y2": rng.standard_normal(n)}
    )
    path = tmp_path / "multi.csv"
    frame.to_csv(path, index=False)
    code, payload = run_cli(
        capsys,
        ["ftest", "--data", str(path), "--coord-cols", "lon,lat", "--y-cols", "y1,y2",
         "--mu0", "0,0", "--q-max", "6", "--mc-reps", "20000"],
    )
    assert code == 0
    res = payload["result"]
    assert res["m"] == 2
    assert res["t2"] >= 0
    assert isinstance(res["reject"], bool)


def test_simulate_from_config(capsys, tmp_path):
    config = {
        "design": {"kind": "uniform-rectangle", "n": 40, "seed": 1},
        "truth": {"rho": 0.02},
        "method": "im-cluster",
        "method_params": {"q": 4},
        "alpha": 0.05,
        "replications": 200,
        "seed": 7,
    }
    path = tmp_path / "sim.json"
    path.write_text(json.dumps(config))
    code, payload = run_cli(capsys, ["simulate", "--config", str(path)])
    assert code == 0
    res = payload["result"]
    assert res["replications"] == 200
    assert 0.0 <= res["rejection_rate"] <= 1.0
    assert payload["config"]["truth"]["rho"] == 0.02


def test_simulate_sweep_csv(capsys, tmp_path):
    config = {
        "design": {"kind": "uniform-rectangle", "n": 30, "seed": 2},
        "truth": {"rho": 0.02},
        "method": "im-cluster",
        "method_params": {"q": 4},
        "replications": 100,
        "seed": 8,
        "scenario": {"heteroskedasticity": "log-linear-sweep"},
    }
    path = tmp_path / "sweep.json"
    path.write_text(json.dumps(config))
    csv_out = tmp_path / "rows.csv"
    code, payload = run_cli(
        capsys, ["simulate", "--config", str(path), "--csv-out", str(csv_out)]
    )
    assert code == 0
    assert "max_rejection_rate" in payload["result"]
    rows = pd.read_csv(csv_out)
    assert len(rows) == 4


def test_simulate_bad_config(capsys, tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    code, _ = run_cli(capsys, ["simulate", "--config", str(path)])
    assert code == 2
