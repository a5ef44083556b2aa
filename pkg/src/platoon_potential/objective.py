"""Acceleration/spacing objective and the constrained search over (alpha, r, p)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.stats import qmc

from .exceptions import ConstraintError, DomainError
from .model import ModelParams, PlatoonState
from .potential import HILL_WIDTH, PotentialSpec, max_abs_slope_on_hill
from .simulator import SimConfig, simulate

ALPHA_MIN, ALPHA_MAX = 1e-3, 1e-1
P_MIN, P_MAX = 3.0, 9.0
# r must stay strictly above L
R_MARGIN = 1e-3
EXIT_PENALTY = 1e6
SLOPE_PENALTY = 1e3
DEFAULT_SPEC = dict(alpha=0.05, r=9.0, p=4.0)


@dataclass(frozen=True)
class ObjectiveSpec:
    w1: float = 0.5
    w2: float = 0.5
    z: float = 4.0
    t0: float = 0.0
    tf: float = 60.0
    accel_norm: float = 5.0
    spacing_norm: float = 20.0

    def __post_init__(self):
        if self.w1 < 0 or self.w2 < 0 or self.w1 == self.w2 == 0:
            raise DomainError(f"weights must be non-negative and not both zero, got {self.w1}, {self.w2}")
        if not self.z > 0:
            raise DomainError(f"slope threshold must be positive, got {self.z}")
        if not self.tf > self.t0:
            raise DomainError(f"need tf > t0, got t0={self.t0}, tf={self.tf}")
        if not (self.accel_norm > 0 and self.spacing_norm > 0):
            raise DomainError("normalization scales must be positive")


@dataclass(frozen=True)
class Feasibility:
    alpha_ok: bool
    r_ok: bool
    p_ok: bool
    max_slope: float
    slope_ok: bool

    @property
    def box_ok(self) -> bool:
        return self.alpha_ok and self.r_ok and self.p_ok

    @property
    def feasible(self) -> bool:
        return self.box_ok and self.slope_ok


def box_ok(spec: PotentialSpec) -> tuple[bool, bool, bool]:
    return (ALPHA_MIN <= spec.alpha <= ALPHA_MAX,
            spec.L < spec.r <= spec.lam - HILL_WIDTH,
            P_MIN <= spec.p <= P_MAX)


def check_feasible(spec: PotentialSpec, obj: ObjectiveSpec) -> Feasibility:
    if spec.is_legacy:
        return Feasibility(False, False, False, float("nan"), False)
    a_ok, r_ok, p_ok = box_ok(spec)
    _, slope = max_abs_slope_on_hill(spec)
    return Feasibility(a_ok, r_ok, p_ok, slope, slope <= obj.z)


@dataclass(frozen=True)
class ObjectiveValue:
    value: float
    accel_term: float
    spacing_term: float
    exited: bool = False

    def __float__(self):
        return self.value


def _sim_config(obj: ObjectiveSpec, simcfg: SimConfig) -> SimConfig:
    return SimConfig(simcfg.T, obj.t0, obj.tf, simcfg.record_stride, simcfg.mode, simcfg.rk4_substeps)


def evaluate_objective(initial: PlatoonState, params: ModelParams, spec: PotentialSpec,
                       obj: ObjectiveSpec = ObjectiveSpec(), simcfg: SimConfig = SimConfig()
                       ) -> ObjectiveValue:
    """Weighted, normalized integrals of squared acceleration and spacing.

    Applied forces stand in for the accelerations (exact under zero-order
    hold). A rollout that leaves the admissible set returns ``EXIT_PENALTY``
    with ``exited`` set.
    """
    if not spec.is_legacy and not all(box_ok(spec)):
        raise ConstraintError(f"parameters outside the feasibility box: {spec.to_dict()}")
    traj = simulate(initial, params, spec, _sim_config(obj, simcfg))
    if traj.exited:
        return ObjectiveValue(EXIT_PENALTY, np.nan, np.nan, True)
    acc = np.sum((traj.forces / obj.accel_norm) ** 2, axis=1)
    gap = np.sum(traj.spacings / obj.spacing_norm, axis=1)
    a_term = obj.w1 * float(np.trapezoid(acc, traj.times))
    s_term = obj.w2 * float(np.trapezoid(gap, traj.times))
    return ObjectiveValue(a_term + s_term, a_term, s_term)


@dataclass
class OptimizationResult:
    spec: PotentialSpec
    objective: float
    feasibility: Feasibility
    success: bool
    evaluations: int
    history: list = field(default_factory=list)  # one dict per restart

    def to_dict(self) -> dict:
        f = self.feasibility
        return {
            "spec": self.spec.to_dict(),
            "objective": self.objective,
            "success": self.success,
            "evaluations": self.evaluations,
            "feasibility": {"alpha_ok": f.alpha_ok, "r_ok": f.r_ok, "p_ok": f.p_ok,
                            "max_slope": f.max_slope, "slope_ok": f.slope_ok},
            "history": self.history,
        }


class _Box:
    """Maps the unit cube onto (log10 alpha, r, p)."""

    def __init__(self, params: ModelParams):
        self.lo = np.array([np.log10(ALPHA_MIN), params.L + R_MARGIN, P_MIN])
        self.hi = np.array([np.log10(ALPHA_MAX), params.lam - HILL_WIDTH, P_MAX])
        self.params = params

    def spec(self, u) -> PotentialSpec:
        u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
        la, r, p = self.lo + u * (self.hi - self.lo)
        return PotentialSpec.performance(10.0 ** la, r, p, self.params.L, self.params.lam)

    def unit(self, spec: PotentialSpec) -> np.ndarray:
        x = np.array([np.log10(spec.alpha), spec.r, spec.p])
        return np.clip((x - self.lo) / (self.hi - self.lo), 0.0, 1.0)


def optimize_parameters(initial: PlatoonState, params: ModelParams,
                        obj: ObjectiveSpec = ObjectiveSpec(), simcfg: SimConfig = SimConfig(),
                        budget: int = 400, restarts: int = 4, seed: int = 0,
                        simplex_size: float = 0.25) -> OptimizationResult:
    """Multi-start downhill simplex over the feasibility box.

    Slope violations are penalized during the search; only points meeting
    every constraint can be reported as the optimum. Restart centres come
    from a scrambled Sobol sequence seeded by ``seed``.
    """
    if budget < 20 * restarts:
        raise DomainError(f"budget {budget} too small for {restarts} restarts (need >= 20 each)")
    bad = initial.omega_violation(params)
    if bad:
        raise DomainError(f"initial state not admissible: {bad}")
    box = _Box(params)
    # draw a power-of-two block and keep a prefix; the sequence itself is unchanged
    m = max(0, int(np.ceil(np.log2(restarts))))
    centres = qmc.Sobol(3, scramble=True, seed=seed).random_base2(m)[:restarts]
    per_restart = budget // restarts
    best = {"f": np.inf, "spec": None, "feas": None}
    best_any = {"f": np.inf, "spec": None, "feas": None}
    history = []
    used = 0

    for c in centres:
        run = {"centre": box.spec(c).to_dict(), "best": np.inf, "evaluations": 0}

        def penalized(u):
            spec = box.spec(u)
            feas = check_feasible(spec, obj)
            val = evaluate_objective(initial, params, spec, obj, simcfg).value
            run["evaluations"] += 1
            pen = val + SLOPE_PENALTY * max(0.0, feas.max_slope - obj.z)
            if feas.feasible and val < best["f"]:
                best.update(f=val, spec=spec, feas=feas)
            if pen < best_any["f"]:
                best_any.update(f=pen, spec=spec, feas=feas)
            run["best"] = min(run["best"], val if feas.feasible else np.inf)
            return pen

        simplex = np.vstack([c, c + simplex_size * np.eye(3)])
        # reflect vertices that fall outside the cube back inside
        simplex = np.where(simplex > 1.0, 2 * c - simplex, simplex)
        simplex = np.clip(simplex, 0.0, 1.0)
        optimize.minimize(penalized, c, method="Nelder-Mead", bounds=[(0.0, 1.0)] * 3,
                          options={"maxfev": per_restart, "initial_simplex": simplex,
                                   "xatol": 1e-4, "fatol": 1e-6})
        used += run["evaluations"]
        if not np.isfinite(run["best"]):
            run["best"] = None
        history.append(run)

    if best["spec"] is None:
        return OptimizationResult(best_any["spec"], best_any["f"], best_any["feas"], False, used, history)
    return OptimizationResult(best["spec"], best["f"], best["feas"], True, used, history)
