"""Platoon constants, state containers and the decentralized feedback law."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .exceptions import DomainError
from .potential import PotentialSpec, _dv


@dataclass(frozen=True)
class ModelParams:
    L: float = 5.0
    lam: float = 20.0
    v_star: float = 30.0
    v_max: float = 35.0
    epsilon: float = 0.2
    mu: float = 0.5
    n: int = 7

    def __post_init__(self):
        if not 0 < self.L < self.lam:
            raise DomainError(f"need 0 < L < lam, got L={self.L}, lam={self.lam}")
        if not 0 < self.v_star < self.v_max:
            raise DomainError(f"need 0 < v_star < v_max, got {self.v_star}, {self.v_max}")
        if self.epsilon <= 0:
            raise DomainError(f"epsilon must be positive, got {self.epsilon}")
        if self.mu <= 0:
            raise DomainError(f"mu must be positive, got {self.mu}")
        if int(self.n) != self.n or self.n < 2:
            raise DomainError(f"n must be an integer >= 2, got {self.n}")

    def as_array(self) -> np.ndarray:
        return np.array([self.L, self.lam, self.v_star, self.v_max, self.epsilon, self.mu])


@dataclass(frozen=True)
class PlatoonState:
    """Positions and speeds; vehicle 0 leads, positions strictly decrease."""

    positions: np.ndarray
    speeds: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        x = np.asarray(self.positions, dtype=float)
        v = np.asarray(self.speeds, dtype=float)
        if x.ndim != 1 or x.shape != v.shape or x.size < 2:
            raise DomainError("positions and speeds must be 1-D arrays of equal length >= 2")
        object.__setattr__(self, "positions", x)
        object.__setattr__(self, "speeds", v)

    @classmethod
    def from_spacings(cls, spacings, speeds, time=0.0, leader_position=0.0):
        """Build a state from the gaps s_2..s_n behind the leader."""
        s = np.asarray(spacings, dtype=float)
        x = leader_position - np.concatenate([[0.0], np.cumsum(s)])
        return cls(x, np.asarray(speeds, dtype=float), time)

    @property
    def n(self) -> int:
        return self.positions.size

    @property
    def spacings(self) -> np.ndarray:
        return self.positions[:-1] - self.positions[1:]

    def omega_violation(self, params: ModelParams, strict_speeds: bool = False) -> str | None:
        """Describe the first violated bound of the admissible set, or None.

        With ``strict_speeds`` the open interval (0, v_max) is used instead of
        the closed one.
        """
        s = self.spacings
        for i, si in enumerate(s, start=2):
            if not si > params.L:
                return f"spacing s_{i}={si:.6g} <= L={params.L}"
        for i, vi in enumerate(self.speeds, start=1):
            if strict_speeds:
                ok = 0.0 < vi < params.v_max
            else:
                ok = 0.0 <= vi <= params.v_max
            if not ok:
                return f"speed v_{i}={vi:.6g} outside {'(' if strict_speeds else '['}0, {params.v_max}{')' if strict_speeds else ']'}"
        return None

    def in_omega(self, params: ModelParams) -> bool:
        return self.omega_violation(params) is None

    def in_open_omega(self, params: ModelParams) -> bool:
        return self.omega_violation(params, strict_speeds=True) is None


@dataclass(frozen=True)
class ForceVector:
    forces: np.ndarray
    gains: np.ndarray = field(repr=False)


@njit(cache=True)
def _f(x, eps):
    if x <= -eps:
        return 0.0
    if x < 0.0:
        return (x + eps) ** 2 / (2.0 * eps)
    return (eps * eps + 2.0 * eps * x) / (2.0 * eps)


@njit(cache=True)
def _g(x, v_star, v_max, eps):
    return v_max * _f(x, eps) / (v_star * (v_max - v_star)) - x / v_star


@njit(cache=True)
def _forces_into(x, v, prm, pot, F, k, dv):
    # prm = (L, lam, v_star, v_max, eps, mu); pot = (kind, alpha, r, p, L, lam)
    n = x.size
    L, lam, v_star, v_max, eps, mu = prm[0], prm[1], prm[2], prm[3], prm[4], prm[5]
    kind, alpha, r, p = int(pot[0]), pot[1], pot[2], pot[3]
    for j in range(n - 1):
        dv[j] = _dv(x[j] - x[j + 1], kind, alpha, r, p, L, lam)
    for i in range(n):
        if i == 0:
            u = -dv[0]
        elif i == n - 1:
            u = dv[n - 2]
        else:
            u = dv[i - 1] - dv[i]
        k[i] = mu + _g(u, v_star, v_max, eps)
        F[i] = -k[i] * (v[i] - v_star) + u


@njit(cache=True)
def _forces(x, v, prm, pot):
    n = x.size
    F = np.empty(n)
    k = np.empty(n)
    _forces_into(x, v, prm, pot, F, k, np.empty(n - 1))
    return F, k


def f_smooth(x, epsilon: float):
    """Smooth upper bound of max(x, 0): quadratic blend on (-eps, 0)."""
    if epsilon <= 0:
        raise DomainError(f"epsilon must be positive, got {epsilon}")
    x = np.asarray(x, dtype=float)
    out = np.where(x <= -epsilon, 0.0,
                   np.where(x < 0.0, (x + epsilon) ** 2, epsilon ** 2 + 2 * epsilon * x))
    out = out / (2 * epsilon)
    return float(out) if out.ndim == 0 else out


def g_gain(x, params: ModelParams):
    fx = f_smooth(x, params.epsilon)
    return params.v_max * fx / (params.v_star * (params.v_max - params.v_star)) - np.asarray(x) / params.v_star


def feedback_forces(state: PlatoonState, params: ModelParams, potential: PotentialSpec) -> ForceVector:
    """Accelerations F_i and gains k_i of the closed-loop law at ``state``.

    Raises DomainError naming the violated bound if the state is not in the
    admissible set.
    """
    if state.n != params.n:
        raise DomainError(f"state has {state.n} vehicles, params expect {params.n}")
    bad = state.omega_violation(params)
    if bad:
        raise DomainError(bad)
    _check_compatible(params, potential)
    F, k = _forces(state.positions, state.speeds, params.as_array(), potential.as_array())
    return ForceVector(F, k)


def _check_compatible(params: ModelParams, potential: PotentialSpec):
    if potential.L != params.L or potential.lam != params.lam:
        raise DomainError(
            f"potential uses L={potential.L}, lam={potential.lam} but params have L={params.L}, lam={params.lam}")
