"""Closed-loop rollouts under zero-order hold, plus sampling-period certificates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .exceptions import DomainError
from .model import ForceVector, ModelParams, PlatoonState, _check_compatible, _forces, _forces_into
from .potential import PotentialSpec

EXACT_ZOH = "exact_zoh"
REFERENCE_RK4 = "reference_rk4"
_MODES = {EXACT_ZOH: 0, REFERENCE_RK4: 1}


@dataclass(frozen=True)
class SimConfig:
    T: float = 0.01
    t0: float = 0.0
    tf: float = 60.0
    record_stride: int = 1
    mode: str = EXACT_ZOH
    rk4_substeps: int = 10

    def __post_init__(self):
        if not self.T > 0:
            raise DomainError(f"sampling period must be positive, got {self.T}")
        if not self.tf > self.t0:
            raise DomainError(f"need tf > t0, got t0={self.t0}, tf={self.tf}")
        if int(self.record_stride) != self.record_stride or self.record_stride < 1:
            raise DomainError(f"record_stride must be an integer >= 1, got {self.record_stride}")
        if self.mode not in _MODES:
            raise DomainError(f"unknown integration mode {self.mode!r}")
        if int(self.rk4_substeps) != self.rk4_substeps or self.rk4_substeps < 1:
            raise DomainError(f"rk4_substeps must be an integer >= 1, got {self.rk4_substeps}")

    @property
    def steps(self) -> int:
        return int(round((self.tf - self.t0) / self.T))


@dataclass
class Trajectory:
    times: np.ndarray
    positions: np.ndarray  # (rows, n)
    speeds: np.ndarray
    forces: np.ndarray  # force applied from this row's time on; NaN on an exit row
    gains: np.ndarray
    exited: bool = False
    violation: str | None = None

    @property
    def spacings(self) -> np.ndarray:
        return self.positions[:, :-1] - self.positions[:, 1:]

    @property
    def n(self) -> int:
        return self.positions.shape[1]

    def state(self, row: int = -1) -> PlatoonState:
        return PlatoonState(self.positions[row], self.speeds[row], float(self.times[row]))

    def final_state(self) -> PlatoonState:
        return self.state(-1)

    def max_abs_force(self) -> float:
        return float(np.nanmax(np.abs(self.forces)))

    def header(self) -> list[str]:
        n = self.n
        return (["t"] + [f"x_{i}" for i in range(1, n + 1)] + [f"v_{i}" for i in range(1, n + 1)]
                + [f"s_{i}" for i in range(2, n + 1)] + [f"F_{i}" for i in range(1, n + 1)]
                + [f"k_{i}" for i in range(1, n + 1)])

    def table(self) -> np.ndarray:
        return np.column_stack([self.times, self.positions, self.speeds, self.spacings,
                                self.forces, self.gains])


@njit(cache=True)
def _outside(x, v, L, v_max):
    for j in range(x.size - 1):
        if not x[j] - x[j + 1] > L:
            return True
    for j in range(v.size):
        if not (0.0 <= v[j] <= v_max):
            return True
    return False


@njit(cache=True)
def _rollout(x0, v0, prm, pot, T, nsteps, stride, mode, substeps):
    n = x0.size
    L, v_max = prm[0], prm[3]
    cap = nsteps // stride + 2
    X = np.empty((cap, n))
    V = np.empty((cap, n))
    Fr = np.empty((cap, n))
    Kr = np.empty((cap, n))
    tk = np.empty(cap)
    x = x0.copy()
    v = v0.copy()
    F = np.empty(n)
    k = np.empty(n)
    dv = np.empty(n - 1)
    _forces_into(x, v, prm, pot, F, k, dv)
    X[0], V[0], Fr[0], Kr[0], tk[0] = x, v, F, k, 0.0
    m = 1
    h = T / substeps
    half_tt = 0.5 * T * T
    if mode == 1:
        a1, a2, a3, a4 = np.empty(n), np.empty(n), np.empty(n), np.empty(n)
        kk = np.empty(n)
    for step in range(1, nsteps + 1):
        if mode == 0:
            for i in range(n):
                x[i] += T * v[i] + half_tt * F[i]
                v[i] += T * F[i]
        else:
            for _ in range(substeps):
                _forces_into(x, v, prm, pot, a1, kk, dv)
                x2 = x + 0.5 * h * v
                v2 = v + 0.5 * h * a1
                _forces_into(x2, v2, prm, pot, a2, kk, dv)
                x3 = x + 0.5 * h * v2
                v3 = v + 0.5 * h * a2
                _forces_into(x3, v3, prm, pot, a3, kk, dv)
                x4 = x + h * v3
                v4 = v + h * a3
                _forces_into(x4, v4, prm, pot, a4, kk, dv)
                x = x + h / 6.0 * (v + 2.0 * v2 + 2.0 * v3 + v4)
                v = v + h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
        if _outside(x, v, L, v_max):
            X[m], V[m], tk[m] = x, v, step * T
            Fr[m, :] = np.nan
            Kr[m, :] = np.nan
            return tk[:m + 1], X[:m + 1], V[:m + 1], Fr[:m + 1], Kr[:m + 1], True
        _forces_into(x, v, prm, pot, F, k, dv)
        if step % stride == 0 or step == nsteps:
            X[m], V[m], Fr[m], Kr[m], tk[m] = x, v, F, k, step * T
            m += 1
    return tk[:m], X[:m], V[:m], Fr[:m], Kr[:m], False


def simulate(initial: PlatoonState, params: ModelParams, potential: PotentialSpec,
             config: SimConfig = SimConfig()) -> Trajectory:
    """Roll the closed loop forward from ``initial`` over [t0, tf].

    Stops early, with ``exited`` set and the offending state as the last row,
    if a step leaves the admissible set.
    """
    bad = initial.omega_violation(params)
    if bad:
        raise DomainError(f"initial state not admissible: {bad}")
    if initial.n != params.n:
        raise DomainError(f"state has {initial.n} vehicles, params expect {params.n}")
    _check_compatible(params, potential)
    t, X, V, F, K, exited = _rollout(initial.positions, initial.speeds, params.as_array(),
                                     potential.as_array(), config.T, config.steps,
                                     int(config.record_stride), _MODES[config.mode],
                                     int(config.rk4_substeps))
    traj = Trajectory(t + config.t0, X, V, F, K, bool(exited))
    if exited:
        traj.violation = traj.final_state().omega_violation(params)
    return traj


def step_exact(state: PlatoonState, forces: ForceVector, T: float) -> PlatoonState:
    """Advance one sampling period with the forces held constant."""
    F = forces.forces
    x = state.positions + T * state.speeds + 0.5 * T * T * F
    v = state.speeds + T * F
    return PlatoonState(x, v, state.time + T)


@dataclass(frozen=True)
class SafetyCertificate:
    """Per-vehicle outcome of the two sampling-period inequalities.

    ``vehicles`` holds 1-based indices. ``spacing_bound`` is the largest T
    allowed by the spacing inequality; the force must lie strictly inside
    (``force_low``, ``force_high``).
    """

    T: float
    vehicles: np.ndarray
    spacing_bound: np.ndarray
    spacing_ok: np.ndarray
    force: np.ndarray
    force_low: np.ndarray
    force_high: np.ndarray
    force_ok: np.ndarray

    @property
    def ok(self) -> np.ndarray:
        return self.spacing_ok & self.force_ok

    @property
    def passed(self) -> bool:
        return bool(np.all(self.ok))

    @property
    def max_T(self) -> float:
        return float(np.min(self.spacing_bound))

    def failures(self) -> list[tuple[int, str]]:
        out = []
        for i, s_ok, f_ok in zip(self.vehicles, self.spacing_ok, self.force_ok):
            if not s_ok:
                out.append((int(i), "spacing"))
            if not f_ok:
                out.append((int(i), "force"))
        return out


def spacing_bounds(state: PlatoonState, params: ModelParams) -> np.ndarray:
    """min(s_i - L, s_{i+1} - L) / v_max per vehicle, dropping absent neighbours."""
    gap = state.spacings - params.L
    n = state.n
    front = np.concatenate([[np.inf], gap])  # s_i, absent for the leader
    rear = np.concatenate([gap, [np.inf]])  # s_{i+1}, absent for the tail
    return np.minimum(front, rear)[:n] / params.v_max


def check_safe_step(state: PlatoonState, forces: ForceVector, T: float, params: ModelParams,
                    vehicle: int | None = None) -> SafetyCertificate:
    """Sampling-period certificate for one vehicle (1-based) or all of them."""
    bad = state.omega_violation(params)
    if bad:
        raise DomainError(bad)
    if not T > 0:
        raise DomainError(f"sampling period must be positive, got {T}")
    idx = np.arange(state.n) if vehicle is None else np.array([vehicle - 1])
    if vehicle is not None and not 1 <= vehicle <= state.n:
        raise DomainError(f"vehicle index {vehicle} outside 1..{state.n}")
    bound = spacing_bounds(state, params)[idx]
    v = state.speeds[idx]
    F = forces.forces[idx]
    lo = -v / T
    hi = (params.v_max - v) / T
    return SafetyCertificate(T, idx + 1, bound, T < bound, F, lo, hi, (lo < F) & (F < hi))


def max_certified_horizon(initial: PlatoonState, params: ModelParams, potential: PotentialSpec,
                          T: float, steps: int):
    """Count consecutive zero-order-hold steps whose certificates all pass.

    Returns ``(certified_steps, first_failure)``; ``first_failure`` is None if
    every step was certified.
    """
    bad = initial.omega_violation(params)
    if bad:
        raise DomainError(f"initial state not admissible: {bad}")
    _check_compatible(params, potential)
    prm, pot = params.as_array(), potential.as_array()
    state = initial
    for k in range(steps):
        if not state.in_omega(params):
            return k, None
        F, gains = _forces(state.positions, state.speeds, prm, pot)
        fv = ForceVector(F, gains)
        cert = check_safe_step(state, fv, T, params)
        if not cert.passed:
            return k, cert
        state = step_exact(state, fv, T)
    return steps, None
