import csv
import json

import numpy as np
import pytest
import yaml

from platoon_potential import ModelParams, PlatoonState, PotentialSpec
from platoon_potential.cli import main
from platoon_potential.config import ExperimentConfig
from platoon_potential.objective import ObjectiveSpec, check_feasible, evaluate_objective
from platoon_potential.simulator import SimConfig
from platoon_potential.surrogate import DatasetSpec, MlpModel, input_stats, target_bounds


def _run(tmp_path, *args):
    return main([*args, "--out", str(tmp_path)])


def _equilibrium_config(tmp_path):
    path = tmp_path / "eq.yaml"
    path.write_text(yaml.safe_dump({
        "initial": {"spacings": [20.0] * 6, "speeds": [30.0] * 7},
        "potential": {"kind": "legacy"},
    }))
    return path


def test_simulate_writes_csv_plots_and_status(tmp_path):
    assert _run(tmp_path, "simulate", "--preset", "scenario1", "--horizon", "5") == 0
    with open(tmp_path / "trajectory.csv") as fh:
        rows = list(csv.reader(fh))
    n = 7
    header = rows[0]
    assert header == (["t"] + [f"x_{i}" for i in range(1, n + 1)] + [f"v_{i}" for i in range(1, n + 1)]
                      + [f"s_{i}" for i in range(2, n + 1)] + [f"F_{i}" for i in range(1, n + 1)]
                      + [f"k_{i}" for i in range(1, n + 1)])
    assert len(header) == 1 + 5 * n - 1
    assert all(len(r) == len(header) for r in rows[1:])
    assert len(rows) == 502
    for name in ("spacings", "accelerations", "speeds"):
        svg = (tmp_path / f"{name}.svg").read_text()
        assert svg.lstrip().startswith("<?xml") and "<svg" in svg
    status = json.loads((tmp_path / "trajectory.status.json").read_text())
    assert status["exited"] is False and status["potential"]["kind"] == "legacy"


def test_simulate_equilibrium_columns_constant(tmp_path):
    cfg = _equilibrium_config(tmp_path)
    assert _run(tmp_path, "simulate", "--config", str(cfg), "--horizon", "3") == 0
    data = np.loadtxt(tmp_path / "trajectory.csv", delimiter=",", skiprows=1)
    n = 7
    v, s, F = data[:, 1 + n:1 + 2 * n], data[:, 1 + 2 * n:3 * n], data[:, 3 * n:4 * n]
    assert np.all(v == 30.0)
    assert np.ptp(s, axis=0).max() < 1e-8
    assert np.abs(F).max() < 1e-20


def test_config_round_trip(tmp_path):
    assert _run(tmp_path, "simulate", "--preset", "scenario1", "--horizon", "1", "--seed", "7",
                "--set", "sim.T=0.005") == 0
    dumped = (tmp_path / "config.yaml").read_text()
    cfg = ExperimentConfig.build(tmp_path / "config.yaml")
    assert cfg.raw == yaml.safe_load(dumped)
    assert cfg.dump() == dumped
    assert cfg.sim.T == 0.005 and cfg.raw["seed"] == 7


def test_invalid_config_exit_code(tmp_path, capsys):
    assert _run(tmp_path, "simulate", "--set", "model.v_max=10") == 1
    assert _run(tmp_path, "simulate", "--set", "sim.nonsense=1") == 1
    assert "sim.nonsense" in capsys.readouterr().err
    assert _run(tmp_path, "simulate", "--config", str(tmp_path / "missing.yaml")) == 1
    assert _run(tmp_path, "simulate", "--preset", "scenario9") == 1


def test_initial_state_outside_omega_exit_code(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text(yaml.safe_dump({"initial": {"spacings": [4.0] * 6, "speeds": [30.0] * 7}}))
    assert _run(tmp_path, "check-step", "--config", str(path)) == 1


def test_omega_exit_gives_safety_code(tmp_path):
    path = tmp_path / "crash.yaml"
    path.write_text(yaml.safe_dump({
        "model": {"n": 2},
        "initial": {"spacings": [6.0], "speeds": [10.0, 30.0]},
        "potential": {"kind": "performance", "alpha": 0.001, "r": 10.0, "p": 3.0},
        "sim": {"T": 0.5},
    }))
    assert _run(tmp_path, "simulate", "--config", str(path), "--horizon", "5") == 2
    status = json.loads((tmp_path / "trajectory.status.json").read_text())
    assert status["exited"] and status["violation"]


def test_check_step_reports(tmp_path, capsys):
    path = tmp_path / "ten.yaml"
    path.write_text(yaml.safe_dump({"initial": {"spacings": [10.0] * 6, "speeds": [30.0] * 7},
                                    "potential": {"kind": "legacy"}}))
    assert _run(tmp_path, "check-step", "--config", str(path), "-T", "0.1") == 0
    out = capsys.readouterr().out
    assert "0.142857" in out and "certified" in out and "not certified" not in out
    assert _run(tmp_path, "check-step", "--config", str(path), "-T", "0.2") == 2
    out = capsys.readouterr().out
    assert "not certified: vehicle 1 (spacing)" in out


def test_optimize_report(tmp_path):
    args = ["optimize", "--preset", "scenario2", "--horizon", "10", "--budget", "60",
            "--set", "optimizer.restarts=2"]
    assert _run(tmp_path, *args) == 0
    first = (tmp_path / "optimization.json").read_bytes()
    assert _run(tmp_path, *args) == 0
    assert (tmp_path / "optimization.json").read_bytes() == first
    rep = json.loads(first)
    spec = PotentialSpec(**rep["spec"])
    obj = ObjectiveSpec(**rep["objective_spec"])
    assert check_feasible(spec, obj).feasible
    state = PlatoonState.from_spacings(rep["initial"]["spacings"], rep["initial"]["speeds"])
    again = evaluate_objective(state, ModelParams(), spec, obj, SimConfig(**rep["sim"])).value
    assert abs(again - rep["objective"]) <= 1e-12 * max(1.0, abs(again))
    assert len(rep["history"]) == 2


def _saved_model(tmp_path, seed=0):
    mean, scale = input_stats(DatasetSpec())
    lo, hi = target_bounds(ModelParams())
    model = MlpModel.initialize([13, 32, 16, 3], mean, scale, lo, hi, seed=seed)
    model.bs[-1][:] = [0.0, 0.3, 0.1]  # centre the untrained output inside the box
    path = tmp_path / "model.json"
    model.save(path)
    return path


def test_train_and_infer_need_inputs(tmp_path, capsys):
    assert _run(tmp_path, "train", "--set", f"dataset.path={tmp_path / 'none.csv'}") == 1
    assert "dataset not found" in capsys.readouterr().err
    assert _run(tmp_path, "infer", "--set", f"potential.model_path={tmp_path / 'none.json'}") == 1
    assert "model not found" in capsys.readouterr().err


def test_dataset_train_infer_pipeline(tmp_path, capsys):
    common = ["--horizon", "5", "--set", "dataset.count=4", "--set", "dataset.budget=40",
              "--set", "dataset.restarts=2", "--set", "train.max_epochs=5"]
    assert _run(tmp_path, "dataset", *common) == 0
    assert (tmp_path / "dataset.csv").exists() and (tmp_path / "dataset.meta.json").exists()
    assert _run(tmp_path, "train", *common) == 0
    meta = json.loads((tmp_path / "model.json").read_text())["meta"]
    for key in ("train_mse", "val_mse", "test_mse", "epochs_run"):
        assert key in meta
    capsys.readouterr()
    assert _run(tmp_path, "infer", *common) == 0
    printed = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    spec = PotentialSpec(**printed["spec"])
    assert check_feasible(spec, ObjectiveSpec()).box_ok
    assert set(printed) >= {"slope_ok", "max_slope"}


def test_infer_then_simulate_twenty_seeds(tmp_path, capsys):
    model = _saved_model(tmp_path)
    for seed in range(20):
        out = tmp_path / f"run{seed}"
        assert main(["infer", "--seed", str(seed), "--out", str(out),
                     "--set", f"potential.model_path={model}"]) == 0
        spec = json.loads((out / "inferred.json").read_text())["spec"]
        assert main(["simulate", "--seed", str(seed), "--out", str(out),
                     "--set", "potential.kind=performance",
                     "--set", f"potential.alpha={spec['alpha']}", "--set", f"potential.r={spec['r']}",
                     "--set", f"potential.p={spec['p']}"]) == 0
        status = json.loads((out / "trajectory.status.json").read_text())
        assert not status["exited"]
    capsys.readouterr()


def test_simulate_with_model_flag(tmp_path):
    model = _saved_model(tmp_path)
    assert _run(tmp_path, "simulate", "--model", str(model), "--horizon", "2") == 0
    status = json.loads((tmp_path / "trajectory.status.json").read_text())
    assert status["potential"]["kind"] == "performance"
