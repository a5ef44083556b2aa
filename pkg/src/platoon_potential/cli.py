"""Command-line entry point: ``platoon <command> [options]``.

Exit codes: 0 success, 1 invalid configuration or missing input,
2 safety violation (admissible set left, step not certified),
3 optimizer or training failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, derive_seed
from .exceptions import DomainError, TrainingError
from .model import feedback_forces
from .objective import check_feasible, evaluate_objective, optimize_parameters
from .plotting import plot_trajectory
from .potential import PotentialSpec
from .simulator import SimConfig, check_safe_step, simulate
from .surrogate import Dataset, MlpModel, generate_dataset, predict, train

EXIT_OK, EXIT_CONFIG, EXIT_SAFETY, EXIT_SOLVER = 0, 1, 2, 3
REPORT_VERSION = 1

log = logging.getLogger("platoon")


class CommandFailed(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _write_json(path, data):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=False) + "\n")


def _optimize(cfg: ExperimentConfig, initial):
    opt = cfg.raw["optimizer"]
    return optimize_parameters(initial, cfg.params, cfg.objective, cfg.sim, opt["budget"],
                               opt["restarts"], derive_seed(cfg.raw["seed"], "optimizer"))


def resolve_potential(cfg: ExperimentConfig, initial) -> PotentialSpec:
    spec = cfg.fixed_potential()
    if spec is not None:
        return spec
    kind = cfg.raw["potential"]["kind"]
    if kind == "surrogate":
        return predict(MlpModel.load(cfg.raw["potential"]["model_path"]), initial)
    res = _optimize(cfg, initial)
    if not res.success:
        raise CommandFailed(EXIT_SOLVER, "optimizer found no feasible parameters")
    return res.spec


def write_trajectory_csv(traj, path):
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, traj.table(), delimiter=",", header=",".join(traj.header()), comments="",
               fmt="%.10g")


def cmd_simulate(cfg: ExperimentConfig):
    initial = cfg.initial_state()
    spec = resolve_potential(cfg, initial)
    traj = simulate(initial, cfg.params, spec, cfg.sim)
    out = cfg.out
    write_trajectory_csv(traj, out / "trajectory.csv")
    plot_trajectory(traj, out, lam=cfg.params.lam)
    status = {"version": REPORT_VERSION, "potential": spec.to_dict(), "exited": traj.exited,
              "violation": traj.violation, "rows": len(traj.times),
              "final_spacings": traj.spacings[-1].tolist(), "final_speeds": traj.speeds[-1].tolist(),
              "max_abs_force": traj.max_abs_force()}
    _write_json(out / "trajectory.status.json", status)
    print(f"wrote {out / 'trajectory.csv'} ({len(traj.times)} rows)")
    if traj.exited:
        raise CommandFailed(EXIT_SAFETY, f"left the admissible set at t={traj.times[-1]:.3f}: {traj.violation}")


def optimization_report(cfg, initial, res):
    return {"version": REPORT_VERSION, "seed": cfg.raw["seed"],
            "initial": {"spacings": initial.spacings.tolist(), "speeds": initial.speeds.tolist()},
            "objective_spec": cfg.raw["objective"], "sim": cfg.raw["sim"],
            "optimizer": cfg.raw["optimizer"], **res.to_dict()}


def cmd_optimize(cfg: ExperimentConfig):
    initial = cfg.initial_state()
    res = _optimize(cfg, initial)
    path = cfg.out / "optimization.json"
    _write_json(path, optimization_report(cfg, initial, res))
    s = res.spec
    print(f"alpha={s.alpha:.6g} r={s.r:.6g} p={s.p:.6g} objective={res.objective:.6g} "
          f"feasible={res.feasibility.feasible}")
    print(f"wrote {path}")
    if not res.success:
        raise CommandFailed(EXIT_SOLVER, "optimizer found no feasible parameters; best infeasible point reported")


def _dataset_path(cfg):
    return Path(cfg.raw["dataset"]["path"] or cfg.out / "dataset.csv")


def cmd_dataset(cfg: ExperimentConfig):
    d = cfg.raw["dataset"]
    ds = generate_dataset(cfg.dataset, cfg.params, cfg.objective, cfg.sim, d["budget"], d["restarts"])
    path = _dataset_path(cfg)
    path.parent.mkdir(parents=True, exist_ok=True)
    ds.save(path)
    print(f"wrote {path} ({len(ds)} rows, {len(ds.meta['dropped_rows'])} dropped)")
    if len(ds) == 0:
        raise CommandFailed(EXIT_SOLVER, "no sample produced feasible parameters")


def _model_path(cfg):
    return Path(cfg.raw["potential"].get("model_path") or cfg.out / "model.json")


def cmd_train(cfg: ExperimentConfig):
    path = _dataset_path(cfg)
    if not path.exists():
        raise CommandFailed(EXIT_CONFIG, f"dataset not found: {path}")
    ds = Dataset.load(path)
    try:
        model = train(ds, cfg.train, split=tuple(cfg.raw["dataset"]["split"]))
    except TrainingError as exc:
        raise CommandFailed(EXIT_SOLVER, str(exc)) from exc
    out = _model_path(cfg)
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save(out)
    m = model.meta
    print(f"train_mse={m['train_mse']:.6g} val_mse={m['val_mse']:.6g} "
          f"test_mse={m['test_mse'] if m['test_mse'] is None else format(m['test_mse'], '.6g')} "
          f"epochs={m['epochs_run']}")
    print(f"wrote {out}")


def cmd_infer(cfg: ExperimentConfig):
    path = _model_path(cfg)
    if not path.exists():
        raise CommandFailed(EXIT_CONFIG, f"model not found: {path}")
    model = MlpModel.load(path)
    initial = cfg.initial_state()
    spec = predict(model, initial)
    feas = check_feasible(spec, cfg.objective)
    result = {"version": REPORT_VERSION, "spec": spec.to_dict(), "box_ok": feas.box_ok,
              "max_slope": feas.max_slope, "slope_ok": feas.slope_ok, "z": cfg.objective.z}
    _write_json(cfg.out / "inferred.json", result)
    print(json.dumps(result))


def cmd_check_step(cfg: ExperimentConfig, T=None):
    initial = cfg.initial_state()
    spec = resolve_potential(cfg, initial)
    T = cfg.sim.T if T is None else T
    forces = feedback_forces(initial, cfg.params, spec)
    cert = check_safe_step(initial, forces, T, cfg.params)
    print(f"{'vehicle':>7} {'T_bound[s]':>11} {'F':>10} {'F_low':>10} {'F_high':>10} {'spacing':>8} {'force':>6}")
    for j in range(len(cert.vehicles)):
        print(f"{cert.vehicles[j]:>7d} {cert.spacing_bound[j]:>11.6f} {cert.force[j]:>10.4f} "
              f"{cert.force_low[j]:>10.4f} {cert.force_high[j]:>10.4f} "
              f"{'ok' if cert.spacing_ok[j] else 'FAIL':>8} {'ok' if cert.force_ok[j] else 'FAIL':>6}")
    print(f"max admissible T (spacing bound): {cert.max_T:.6f} s")
    if cert.passed:
        print(f"T={T:g} s: certified")
        return
    bad = ", ".join(f"vehicle {i} ({what})" for i, what in cert.failures())
    print(f"T={T:g} s: not certified: {bad}")
    raise CommandFailed(EXIT_SAFETY, "sampling period not certified")


COMMANDS = {
    "simulate": cmd_simulate,
    "optimize": cmd_optimize,
    "dataset": cmd_dataset,
    "train": cmd_train,
    "infer": cmd_infer,
    "check-step": cmd_check_step,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="platoon", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML experiment file")
        p.add_argument("--preset", help="scenario1 or scenario2")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--horizon", type=float, help="simulated seconds after t0")
        p.add_argument("--step", type=float, help="sampling period T [s]")
        p.add_argument("--budget", type=int, help="optimizer evaluation budget")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config field by dotted path, e.g. sim.T=0.005")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "check-step":
            p.add_argument("-T", type=float, dest="T", help="sampling period to certify")
        if name == "simulate":
            p.add_argument("--model", help="use a trained surrogate for the potential")
    return ap


def _overrides(args):
    out = []
    if args.seed is not None:
        out.append(("seed", args.seed))
    if args.out is not None:
        out.append(("out", args.out))
    if args.step is not None:
        out.append(("sim.T", args.step))
    if args.budget is not None:
        out.append(("optimizer.budget", args.budget))
    for item in args.set:
        if "=" not in item:
            raise ConfigError(item, "override must look like KEY=VALUE")
        k, v = item.split("=", 1)
        out.append((k.strip(), v.strip()))
    if getattr(args, "model", None):
        out += [("potential.kind", "surrogate"), ("potential.model_path", args.model)]
    return out


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = _overrides(args)
        cfg = ExperimentConfig.build(args.config, args.preset, overrides)
        if args.horizon is not None:
            sim = cfg.raw["sim"]
            cfg = ExperimentConfig.build(args.config, args.preset,
                                         overrides + [("sim.tf", sim["t0"] + args.horizon),
                                                      ("objective.tf", cfg.raw["objective"]["t0"] + args.horizon)])
        cfg.out.mkdir(parents=True, exist_ok=True)
        (cfg.out / "config.yaml").write_text(cfg.dump())
        if args.command == "check-step":
            cmd_check_step(cfg, args.T)
        else:
            COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CommandFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
