"""Acceptance criteria, one test each; every test prints a PASS/FAIL line.

The surrogate dataset takes several minutes to generate, so it is cached in
the pytest cache directory keyed by its configuration.
"""

import hashlib
import json
import time
from fractions import Fraction

import numpy as np
import pytest

from platoon_potential import (ModelParams, PlatoonState, PotentialSpec, SimConfig,
                               max_certified_horizon, simulate, step_exact, v_eval, v_prime, v_second)
from platoon_potential.cli import main
from platoon_potential.config import ExperimentConfig
from platoon_potential.model import ForceVector
from platoon_potential.objective import (DEFAULT_SPEC, ObjectiveSpec, check_feasible, evaluate_objective,
                                         optimize_parameters)
from platoon_potential.potential import HILL_WIDTH, junction_jumps, max_abs_slope_on_hill
from platoon_potential.surrogate import Dataset, MlpModel, TrainConfig, generate_dataset, gradient_check, train

pytestmark = pytest.mark.slow


def verdict(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'} | {detail}")
    assert ok, detail


def _random_state(rng, n=7):
    return PlatoonState.from_spacings(rng.uniform(8, 12, n - 1), rng.uniform(27, 33, n))


def _random_feasible_spec(rng, z=4.0):
    while True:
        spec = PotentialSpec.performance(10 ** rng.uniform(-3, -1), rng.uniform(5.5, 17.0),
                                         rng.uniform(3, 9))
        if max_abs_slope_on_hill(spec)[1] <= z:
            return spec


@pytest.fixture(scope="module")
def scenario1():
    cfg = ExperimentConfig.build(preset="scenario1")
    state = cfg.initial_state()
    t = time.perf_counter()
    traj = simulate(state, cfg.params, cfg.fixed_potential(), cfg.sim)
    return cfg, cfg.fixed_potential(), traj, time.perf_counter() - t


@pytest.fixture(scope="module")
def scenario2(tmp_path_factory):
    out = tmp_path_factory.mktemp("scenario2")
    code = main(["optimize", "--preset", "scenario2", "--out", str(out)])
    report = json.loads((out / "optimization.json").read_text())
    cfg = ExperimentConfig.build(preset="scenario2")
    spec = PotentialSpec(**report["spec"])
    traj = simulate(cfg.initial_state(), cfg.params, spec, cfg.sim)
    return code, spec, traj


def test_criterion_1_scenario1(capsys, scenario1):
    cfg, _, traj, seconds = scenario1
    s, v = traj.spacings[-1], traj.speeds[-1]
    ok = (not traj.exited and np.all((s >= 19) & (s <= 21)) and np.all(np.abs(v - 30) <= 0.1)
          and seconds < 10)
    verdict(capsys, 1, ok, f"final spacings {np.round(s, 3).tolist()}, max |v-30| "
                           f"{np.abs(v - 30).max():.2e}, rollout {seconds:.2f} s")


def test_criterion_2_scenario2(capsys, scenario1, scenario2):
    _, _, traj1, _ = scenario1
    code, spec, traj2 = scenario2
    s = traj2.spacings[-1]
    f1, f2 = traj1.max_abs_force(), traj2.max_abs_force()
    in_band = bool(np.all((s >= 11) & (s <= 13)))
    ok = code == 0 and not traj2.exited and in_band and f2 < f1
    verdict(capsys, 2, ok, f"optimized alpha={spec.alpha:.4g} r={spec.r:.4f} p={spec.p:.4f}; final spacings "
                           f"{np.round(s, 3).tolist()} (band [11, 13]: {'yes' if in_band else 'no'}); "
                           f"max|F| {f2:.3f} vs scenario 1 {f1:.3f}")


def test_criterion_3_certificate_soundness(capsys):
    params = ModelParams()
    rng = np.random.default_rng(2024)
    violations, periods = 0, []
    for j in range(100):
        state = _random_state(rng)
        spec = PotentialSpec.legacy() if j % 2 == 0 else _random_feasible_spec(rng)
        T, tf = 0.01, 60.0
        while max_certified_horizon(state, params, spec, T, int(round(tf / T)))[0] < int(round(tf / T)):
            T /= 2
        periods.append(T)
        traj = simulate(state, params, spec, SimConfig(T=T, tf=tf))
        violations += int(traj.exited)
        violations += int(np.sum(traj.spacings <= params.L))
        violations += int(np.sum((traj.speeds <= 0) | (traj.speeds >= params.v_max)))
    verdict(capsys, 3, violations == 0,
            f"100 rollouts, {violations} violations, T in [{min(periods):g}, {max(periods):g}] s")


def test_criterion_4_exact_step(capsys):
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(5_000):
        # two independent vehicles per step, 1e4 samples in total
        x, v = np.sort(rng.uniform(-1e3, 1e3, 2))[::-1], rng.uniform(0, 35, 2)
        F, T = rng.uniform(-10, 10, 2), rng.uniform(1e-4, 1)
        out = step_exact(PlatoonState(x, v), ForceVector(F, np.ones(2)), T)
        for i in range(2):
            fx, fv, fF, fT = map(Fraction, (x[i], v[i], F[i], T))
            xe, ve = fx + fv * fT + fF * fT * fT / 2, fv + fF * fT
            for got, exact in ((out.positions[i], xe), (out.speeds[i], ve)):
                err = abs(Fraction(float(got)) - exact) / max(abs(exact), Fraction(1, 10**300))
                worst = max(worst, float(err))
    verdict(capsys, 4, worst <= 1e-12, f"max relative error {worst:.2e} over 1e4 steps (exact rational oracle)")


def test_criterion_5_potential(capsys):
    rng = np.random.default_rng(5)
    h, fd_bad = 1e-6, 0
    for _ in range(1000):
        spec = _random_feasible_spec(rng) if rng.random() < 0.9 else PotentialSpec.legacy()
        s = rng.uniform(spec.L + 0.01, spec.lam + 5)
        d1, d2 = v_prime(s, spec), v_second(s, spec)
        fd1 = (v_eval(s + h, spec) - v_eval(s - h, spec)) / (2 * h)
        fd2 = (v_prime(s + h, spec) - v_prime(s - h, spec)) / (2 * h)
        fd_bad += abs(fd1 - d1) > max(1e-5, 1e-4 * abs(d1))
        fd_bad += abs(fd2 - d2) > max(1e-5, 1e-4 * abs(d2))
    c2 = {}
    for p in (3.0, 4.0, 6.0, 9.0):
        spec = PotentialSpec.performance(0.02, 10.0, p)
        c2[p] = max(float(junction_jumps(spec, s0).max()) for s0 in (spec.r, spec.r + HILL_WIDTH, spec.lam))
    p2 = junction_jumps(PotentialSpec.performance(0.02, 10.0, 2.0), 10.0)
    ok = fd_bad == 0 and all(j <= 1e-6 for j in c2.values()) and p2[2] > 1e-6
    verdict(capsys, 5, ok, f"{fd_bad} finite-difference mismatches in 2000 checks; junction jumps "
                           f"{ {k: f'{v:.1e}' for k, v in c2.items()} }; p=2 curvature jump at r {p2[2]:.3g}")


def test_criterion_6_convergence(capsys, scenario1, scenario2):
    _, legacy, traj1, _ = scenario1
    _, spec2, traj2 = scenario2
    rows = []
    ok = True
    for name, spec, traj in (("scenario1", legacy, traj1), ("scenario2", spec2, traj2)):
        dv = float(np.abs(v_prime(traj.spacings[-1], spec)).max())
        dspeed = float(np.abs(traj.speeds[-1] - 30.0).max())
        ok &= (not traj.exited) and dv < 0.01 and dspeed < 0.1
        rows.append(f"{name}: max|V'|={dv:.2e}, max|v-v*|={dspeed:.2e}")
    verdict(capsys, 6, ok, "; ".join(rows))


def test_criterion_7_optimizer(capsys):
    params, obj = ModelParams(), ObjectiveSpec()
    default = PotentialSpec.performance(**DEFAULT_SPEC)
    rng = np.random.default_rng(7)
    worse, infeasible, slowest, gaps = 0, 0, 0.0, []
    for seed in range(20):
        state = _random_state(rng)
        t = time.perf_counter()
        res = optimize_parameters(state, params, obj, budget=400, restarts=4, seed=seed)
        slowest = max(slowest, time.perf_counter() - t)
        base = evaluate_objective(state, params, default, obj).value
        worse += res.objective > base
        infeasible += not (res.success and check_feasible(res.spec, obj).feasible)
        gaps.append(base - res.objective)
    ok = worse == 0 and infeasible == 0 and slowest <= 120
    verdict(capsys, 7, ok, f"{worse}/20 worse than default, {infeasible}/20 infeasible, "
                           f"min improvement {min(gaps):.3g}, slowest {slowest:.1f} s")


@pytest.fixture(scope="module")
def surrogate_dataset(request):
    cfg = ExperimentConfig.build()
    d = cfg.raw["dataset"]
    key = json.dumps({"dataset": d, "objective": cfg.raw["objective"], "sim": cfg.raw["sim"],
                      "model": cfg.raw["model"], "seed": cfg.raw["seed"]}, sort_keys=True)
    digest = hashlib.sha256(key.encode()).hexdigest()[:16]
    path = request.config.cache.mkdir("platoon-acceptance") / f"dataset-{digest}.csv"
    if not path.exists():
        ds = generate_dataset(cfg.dataset, cfg.params, cfg.objective, cfg.sim, d["budget"], d["restarts"])
        ds.save(path)
    return cfg, Dataset.load(path)


@pytest.fixture(scope="module")
def trained_model(surrogate_dataset, tmp_path_factory):
    cfg, ds = surrogate_dataset
    model = train(ds, cfg.train, split=tuple(cfg.raw["dataset"]["split"]))
    path = tmp_path_factory.mktemp("surrogate") / "model.json"
    model.save(path)
    return model, path


def test_criterion_8_surrogate(capsys, surrogate_dataset, trained_model):
    cfg, ds = surrogate_dataset
    model, _ = trained_model
    tr, _, _ = ds.split(tuple(cfg.raw["dataset"]["split"]), cfg.train.seed)
    x, y = ds.Xn[tr[0]], ds.Yn[tr[0]]
    # same seed, so these are the weights train() starts from
    init = MlpModel.initialize(model.sizes, ds.x_mean, ds.x_scale, ds.y_lo, ds.y_hi, cfg.train.seed)
    ten = train(ds, TrainConfig(**{**cfg.raw["train"], "max_epochs": 10, "patience": 10**6,
                                   "seed": cfg.train.seed}))
    g0, g10 = gradient_check(init, x, y), gradient_check(ten, x, y)
    test_mse = model.meta["test_mse"]
    ok = len(ds) >= 0.9 * cfg.dataset.count and test_mse <= 0.005 and g0 < 1e-5 and g10 < 1e-5
    verdict(capsys, 8, ok, f"{len(ds)} rows, test MSE {test_mse:.4g} (target <= 0.005), "
                           f"train {model.meta['train_mse']:.4g}, epochs {model.meta['epochs_run']}; "
                           f"gradient check {g0:.1e} at init, {g10:.1e} after 10 epochs")


def test_criterion_9_end_to_end(capsys, trained_model, tmp_path):
    _, model_path = trained_model
    exits, outside, codes = 0, 0, []
    lo, hi = np.inf, -np.inf
    for seed in range(20):
        out = tmp_path / f"seed{seed}"
        codes.append(main(["infer", "--seed", str(seed), "--out", str(out),
                           "--set", f"potential.model_path={model_path}"]))
        spec = json.loads((out / "inferred.json").read_text())["spec"]
        codes.append(main(["simulate", "--seed", str(seed), "--out", str(out),
                           "--set", "potential.kind=performance", "--set", f"potential.alpha={spec['alpha']}",
                           "--set", f"potential.r={spec['r']}", "--set", f"potential.p={spec['p']}"]))
        status = json.loads((out / "trajectory.status.json").read_text())
        exits += status["exited"]
        s = np.array(status["final_spacings"])
        outside += int(np.sum((s < 8) | (s > 20)))
        lo, hi = min(lo, s.min()), max(hi, s.max())
    ok = exits == 0 and outside == 0 and not any(codes)
    verdict(capsys, 9, ok, f"{exits} exits, {outside} spacings outside [8, 20], "
                           f"final spacings in [{lo:.2f}, {hi:.2f}]")
