"""Legacy and performance-sensitive spacing potentials.

The performance-sensitive potential adds a bump ("hill") on the window
[r, r + HILL_WIDTH) to the scaled repulsive base term, which creates an
extra equilibrium spacing below the cutoff ``lam``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import optimize

from .exceptions import DomainError

HILL_WIDTH = 3.0
# Fixed magnitude of the legacy potential; above the tunable alpha range, so
# legacy forces stay large at short spacings.
LEGACY_SCALE = 0.4

LEGACY = 0
PERFORMANCE = 1
_KIND_CODES = {"legacy": LEGACY, "performance": PERFORMANCE}


@dataclass(frozen=True)
class PotentialSpec:
    kind: str = "performance"
    alpha: float = 0.05
    r: float = 9.0
    p: float = 4.0
    L: float = 5.0
    lam: float = 20.0

    def __post_init__(self):
        if self.kind not in _KIND_CODES:
            raise DomainError(f"unknown potential kind {self.kind!r}")
        if not 0 < self.L < self.lam:
            raise DomainError(f"need 0 < L < lam, got L={self.L}, lam={self.lam}")

    @classmethod
    def legacy(cls, L=5.0, lam=20.0, scale=LEGACY_SCALE):
        return cls("legacy", float(scale), 0.0, 0.0, L, lam)

    @classmethod
    def performance(cls, alpha, r, p, L=5.0, lam=20.0):
        return cls("performance", float(alpha), float(r), float(p), L, lam)

    @property
    def is_legacy(self) -> bool:
        return self.kind == "legacy"

    def as_array(self) -> np.ndarray:
        if self.is_legacy:
            return np.array([LEGACY, self.alpha, 0.0, 0.0, self.L, self.lam])
        return np.array([PERFORMANCE, self.alpha, self.r, self.p, self.L, self.lam])

    def to_dict(self) -> dict:
        return {"kind": self.kind, "alpha": self.alpha, "r": self.r, "p": self.p,
                "L": self.L, "lam": self.lam}


# Scalar kernels. Legacy is the base term alone, scaled by its fixed alpha.

@njit(cache=True)
def _v(s, kind, alpha, r, p, L, lam):
    if s <= L:
        return np.inf
    if s >= lam:
        return 0.0
    out = alpha * (lam - s) ** 3 / (s - L)
    if kind == PERFORMANCE and r <= s < r + HILL_WIDTH:
        out += (r + HILL_WIDTH - s) ** p * (s - r) ** p / (s - L) ** 2
    return out


@njit(cache=True)
def _dv(s, kind, alpha, r, p, L, lam):
    if s <= L:
        return -np.inf
    if s >= lam:
        return 0.0
    u = lam - s
    w = s - L
    out = -alpha * u * u * (2.0 * s + lam - 3.0 * L) / (w * w)
    if kind == PERFORMANCE and r <= s < r + HILL_WIDTH:
        a = r + HILL_WIDTH - s
        b = s - r
        ap = a ** p
        bp = b ** p
        da = -p * a ** (p - 1.0)
        db = p * b ** (p - 1.0)
        out += (da * bp + ap * db) / (w * w) - 2.0 * ap * bp / (w * w * w)
    return out


@njit(cache=True)
def _ddv(s, kind, alpha, r, p, L, lam):
    if s <= L:
        return np.inf
    if s >= lam:
        return 0.0
    u = lam - s
    w = s - L
    out = alpha * (6.0 * u / w + 6.0 * u * u / (w * w) + 2.0 * u ** 3 / w ** 3)
    if kind == PERFORMANCE and r <= s < r + HILL_WIDTH:
        a = r + HILL_WIDTH - s
        b = s - r
        ap = a ** p
        bp = b ** p
        da = -p * a ** (p - 1.0)
        db = p * b ** (p - 1.0)
        dda = p * (p - 1.0) * a ** (p - 2.0)
        ddb = p * (p - 1.0) * b ** (p - 2.0)
        num = ap * bp
        dnum = da * bp + ap * db
        ddnum = dda * bp + 2.0 * da * db + ap * ddb
        out += ddnum / w ** 2 - 4.0 * dnum / w ** 3 + 6.0 * num / w ** 4
    return out


@njit(cache=True)
def _map(which, s, kind, alpha, r, p, L, lam):
    out = np.empty(s.size)
    for j in range(s.size):
        if which == 0:
            out[j] = _v(s[j], kind, alpha, r, p, L, lam)
        elif which == 1:
            out[j] = _dv(s[j], kind, alpha, r, p, L, lam)
        else:
            out[j] = _ddv(s[j], kind, alpha, r, p, L, lam)
    return out


def _evaluate(which, s, spec):
    arr = np.asarray(s, dtype=float)
    if np.any(arr <= spec.L):
        raise DomainError(f"spacing must exceed L={spec.L}, got min {arr.min():.6g}")
    kind, alpha, r, p, L, lam = spec.as_array()
    out = _map(which, arr.ravel(), int(kind), alpha, r, p, L, lam).reshape(arr.shape)
    return float(out) if out.ndim == 0 else out


def v_eval(s, spec: PotentialSpec):
    """Potential value at spacing ``s`` (scalar or array); requires s > L."""
    return _evaluate(0, s, spec)


def v_prime(s, spec: PotentialSpec):
    return _evaluate(1, s, spec)


def v_second(s, spec: PotentialSpec):
    return _evaluate(2, s, spec)


def max_abs_slope_on_hill(spec: PotentialSpec, grid_step: float = 1e-3, xtol: float = 1e-6):
    """Largest |V'| over the closed hill window and where it occurs.

    A dense grid locates the best cell; golden-section search refines inside
    the bracket formed by its neighbours.
    """
    if spec.is_legacy:
        raise DomainError("hill slope is only defined for the performance-sensitive potential")
    lo, hi = spec.r, spec.r + HILL_WIDTH
    m = int(np.ceil(HILL_WIDTH / grid_step))
    grid = np.linspace(lo, hi, m + 1)
    # right end of the window belongs to the base branch; V' is continuous there for p > 1
    vals = np.abs(v_prime(grid, spec))
    j = int(np.argmax(vals))
    best_s, best = float(grid[j]), float(vals[j])
    if 0 < j < m:
        neg = lambda s: -abs(v_prime(s, spec))
        try:
            s_opt = optimize.golden(neg, brack=(grid[j - 1], grid[j], grid[j + 1]),
                                    tol=xtol / max(abs(grid[j]), 1.0))
        except ValueError:
            s_opt = best_s
        s_opt = float(np.clip(s_opt, lo, hi))
        val = abs(v_prime(s_opt, spec))
        if val >= best:
            best_s, best = s_opt, val
    return best_s, best


@dataclass(frozen=True)
class Equilibria:
    roots: list  # (spacing, "local_min" | "local_max")
    flat_from: float  # V' vanishes identically on [flat_from, inf)


def find_equilibria(spec: PotentialSpec, step: float = 1e-3, tol: float = 1e-13) -> Equilibria:
    """Roots of V' on (L, lam), classified by the sign of V''.

    Roots are bracketed by sign changes on a uniform grid and refined by
    Brent's bracketing method. The flat region s >= lam is reported via ``flat_from`` only.
    """
    if spec.is_legacy:
        return Equilibria([], spec.lam)
    grid = np.arange(spec.L + step, spec.lam, step)
    d = v_prime(grid, spec)
    roots = []
    for j in np.nonzero(np.sign(d[:-1]) != np.sign(d[1:]))[0]:
        a, b = grid[j], grid[j + 1]
        if d[j] == 0.0:
            s0 = a
        else:
            s0 = optimize.brentq(lambda s: v_prime(s, spec), a, b, xtol=tol)
        # a root at the flat region boundary is not an interior equilibrium
        if s0 >= spec.lam - step:
            continue
        curv = v_second(s0, spec)
        if curv == 0.0:
            curv = d[j + 1]
        kind = "local_min" if curv > 0 else "local_max"
        roots.append((float(s0), kind))
    return Equilibria(roots, spec.lam)


def junction_jumps(spec: PotentialSpec, s0: float) -> np.ndarray:
    """Gaps between left and right limits of (V, V', V'') at a breakpoint."""
    left = np.nextafter(s0, -np.inf)
    return np.array([abs(f(s0, spec) - f(left, spec)) for f in (v_eval, v_prime, v_second)])
