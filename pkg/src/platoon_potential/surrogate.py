"""Offline dataset of optimal potential parameters and the MLP that learns it.

Inputs are the initial spacings s_2..s_n followed by the speeds v_1..v_n;
targets are (alpha, r, p). Inputs are scaled by the sampling ranges (centre
and half-width) and targets by the feasibility box, both into fixed
intervals, so the normalization never depends on which rows were drawn.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import DomainError, TrainingError
from .model import ModelParams, PlatoonState
from .objective import (ALPHA_MAX, ALPHA_MIN, P_MAX, P_MIN, R_MARGIN, ObjectiveSpec,
                        optimize_parameters)
from .potential import HILL_WIDTH, PotentialSpec
from .simulator import SimConfig

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


@dataclass(frozen=True)
class DatasetSpec:
    count: int = 6000
    n: int = 7
    spacing_range: tuple = (8.0, 12.0)
    speed_range: tuple = (27.0, 33.0)
    standstill: float = 5.0
    headway: float = 0.1
    split: tuple = (0.85, 0.075, 0.075)
    seed: int = 0

    def __post_init__(self):
        if self.count < 1 or self.n < 2:
            raise DomainError("count must be >= 1 and n >= 2")
        lo, hi = self.spacing_range
        if not lo < hi:
            raise DomainError(f"bad spacing range {self.spacing_range}")
        lo, hi = self.speed_range
        if not 0 <= lo < hi:
            raise DomainError(f"bad speed range {self.speed_range}")
        if any(f < 0 for f in self.split) or abs(sum(self.split) - 1.0) > 1e-9:
            raise DomainError(f"split fractions must be non-negative and sum to 1, got {self.split}")
        if self.standstill + self.headway * self.speed_range[0] >= self.spacing_range[1]:
            raise DomainError("headway constraint rejects every spacing in range")

    def min_spacing(self, rear_speed):
        return self.standstill + self.headway * np.asarray(rear_speed)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 35e-6
    max_epochs: int = 2000
    patience: int = 50
    target_mse: float = 1e-3
    batch_size: int = 32
    seed: int = 0
    optimizer: str = "adam"

    def __post_init__(self):
        if not (self.learning_rate > 0 and self.max_epochs > 0 and self.patience > 0
                and self.target_mse > 0 and self.batch_size > 0):
            raise DomainError("training settings must all be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise DomainError(f"unknown optimizer {self.optimizer!r}")


# -- normalization ---------------------------------------------------------

def input_stats(dspec: DatasetSpec):
    s_lo, s_hi = dspec.spacing_range
    v_lo, v_hi = dspec.speed_range
    mean = np.r_[np.full(dspec.n - 1, (s_lo + s_hi) / 2), np.full(dspec.n, (v_lo + v_hi) / 2)]
    scale = np.r_[np.full(dspec.n - 1, (s_hi - s_lo) / 2), np.full(dspec.n, (v_hi - v_lo) / 2)]
    return mean, scale


def target_bounds(params: ModelParams):
    lo = np.array([ALPHA_MIN, params.L + R_MARGIN, P_MIN])
    hi = np.array([ALPHA_MAX, params.lam - HILL_WIDTH, P_MAX])
    return lo, hi


def features(state: PlatoonState) -> np.ndarray:
    return np.r_[state.spacings, state.speeds]


# -- dataset ----------------------------------------------------------------

@dataclass
class Dataset:
    """Raw inputs/targets plus the statistics used to normalize them."""

    X: np.ndarray
    Y: np.ndarray
    x_mean: np.ndarray
    x_scale: np.ndarray
    y_lo: np.ndarray
    y_hi: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.X)

    @property
    def Xn(self):
        return (self.X - self.x_mean) / self.x_scale

    @property
    def Yn(self):
        return (self.Y - self.y_lo) / (self.y_hi - self.y_lo)

    def split(self, fractions=(0.85, 0.075, 0.075), seed=0):
        """Index arrays (train, val, test) from a seeded permutation."""
        m = len(self)
        n_train = int(round(fractions[0] * m))
        n_val = int(round(fractions[1] * m))
        perm = np.random.default_rng(seed).permutation(m)
        return perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:]

    def header(self):
        n = (self.X.shape[1] + 1) // 2
        return ([f"s_{i}" for i in range(2, n + 1)] + [f"v_{i}" for i in range(1, n + 1)]
                + ["alpha", "r", "p"])

    def save(self, path):
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.header())
            for row in np.hstack([self.Xn, self.Yn]):
                w.writerow([repr(float(x)) for x in row])
        meta = dict(self.meta, format_version=FORMAT_VERSION, rows=len(self),
                    x_mean=self.x_mean.tolist(), x_scale=self.x_scale.tolist(),
                    y_lo=self.y_lo.tolist(), y_hi=self.y_hi.tolist())
        path.with_suffix(".meta.json").write_text(json.dumps(meta, indent=2))

    @classmethod
    def load(cls, path):
        path = Path(path)
        meta = json.loads(path.with_suffix(".meta.json").read_text())
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        x_mean, x_scale = np.array(meta.pop("x_mean")), np.array(meta.pop("x_scale"))
        y_lo, y_hi = np.array(meta.pop("y_lo")), np.array(meta.pop("y_hi"))
        d = x_mean.size
        X = data[:, :d] * x_scale + x_mean
        Y = data[:, d:] * (y_hi - y_lo) + y_lo
        return cls(X, Y, x_mean, x_scale, y_lo, y_hi, meta)


def sample_initial_conditions(dspec: DatasetSpec, count: int, rng: np.random.Generator):
    """Uniform draws that respect the standstill-plus-headway spacing floor.

    Returns ``(states, rejected)`` where ``rejected`` counts discarded draws.
    """
    states, rejected = [], 0
    while len(states) < count:
        s = rng.uniform(*dspec.spacing_range, dspec.n - 1)
        v = rng.uniform(*dspec.speed_range, dspec.n)
        # gap s_i sits in front of vehicle i, the rear vehicle of that pair
        if np.all(s > dspec.min_spacing(v[1:])):
            states.append(PlatoonState.from_spacings(s, v))
        else:
            rejected += 1
    return states, rejected


def generate_dataset(dspec: DatasetSpec, params: ModelParams, obj: ObjectiveSpec = ObjectiveSpec(),
                     simcfg: SimConfig = SimConfig(), budget: int = 200, restarts: int = 4,
                     n_jobs: int = 1) -> Dataset:
    """Solve the parameter problem for ``dspec.count`` sampled initial conditions.

    Every sample uses the same restart schedule, so the optimum varies with the
    initial condition only. Samples where the optimizer finds no feasible point
    are dropped and logged.
    """
    if params.n != dspec.n:
        raise DomainError(f"dataset has n={dspec.n}, params have n={params.n}")
    seq = np.random.SeedSequence(dspec.seed)
    ic_seed, opt_seed = seq.spawn(2)
    states, rejected = sample_initial_conditions(dspec, dspec.count, np.random.default_rng(ic_seed))
    opt_seed = int(opt_seed.generate_state(1)[0])

    def solve(st):
        return optimize_parameters(st, params, obj, simcfg, budget, restarts, opt_seed)

    if n_jobs == 1:
        results = []
        for j, st in enumerate(states):
            results.append(solve(st))
            if (j + 1) % 50 == 0:
                log.info("solved %d/%d initial conditions", j + 1, len(states))
    else:
        from joblib import Parallel, delayed
        results = Parallel(n_jobs=n_jobs)(delayed(solve)(st) for st in states)

    X, Y, dropped = [], [], []
    for j, (st, res) in enumerate(zip(states, results)):
        if not res.success:
            log.warning("sample %d: no feasible parameters found, row dropped", j)
            dropped.append(j)
            continue
        X.append(features(st))
        Y.append([res.spec.alpha, res.spec.r, res.spec.p])
    x_mean, x_scale = input_stats(dspec)
    y_lo, y_hi = target_bounds(params)
    meta = {"dataset": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(dspec).items()},
            "rejected_draws": rejected, "dropped_rows": dropped, "budget": budget,
            "restarts": restarts, "objective": asdict(obj), "sim": asdict(simcfg),
            "L": params.L, "lam": params.lam}
    return Dataset(np.array(X).reshape(-1, x_mean.size), np.array(Y).reshape(-1, 3),
                   x_mean, x_scale, y_lo, y_hi, meta)


# -- network ----------------------------------------------------------------

def relu(z):
    return np.maximum(z, 0.0)


def init_layers(sizes, rng):
    """Uniform Glorot initialization; biases start at zero."""
    Ws, bs = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        Ws.append(rng.uniform(-lim, lim, (fan_in, fan_out)))
        bs.append(np.zeros(fan_out))
    return Ws, bs


def forward(Ws, bs, X):
    """Return the output and the per-layer (input, pre-activation) cache."""
    cache = []
    a = X
    for j, (W, b) in enumerate(zip(Ws, bs)):
        z = a @ W + b
        cache.append((a, z))
        a = relu(z) if j < len(Ws) - 1 else z
    return a, cache


def mse(pred, target):
    return float(np.mean((pred - target) ** 2))


def backward(Ws, cache, pred, target):
    """Gradients of the mean squared error w.r.t. every weight and bias."""
    g = 2.0 * (pred - target) / pred.size
    dWs, dbs = [None] * len(Ws), [None] * len(Ws)
    for j in reversed(range(len(Ws))):
        a, z = cache[j]
        if j < len(Ws) - 1:
            g = g * (z > 0)
        dWs[j] = a.T @ g
        dbs[j] = g.sum(axis=0)
        g = g @ Ws[j].T
    return dWs, dbs


@dataclass
class MlpModel:
    Ws: list
    bs: list
    x_mean: np.ndarray
    x_scale: np.ndarray
    y_lo: np.ndarray
    y_hi: np.ndarray
    L: float = 5.0
    lam: float = 20.0
    meta: dict = field(default_factory=dict)

    @property
    def sizes(self):
        return [self.Ws[0].shape[0]] + [W.shape[1] for W in self.Ws]

    @classmethod
    def initialize(cls, sizes, x_mean, x_scale, y_lo, y_hi, seed=0, L=5.0, lam=20.0):
        Ws, bs = init_layers(sizes, np.random.default_rng(seed))
        return cls(Ws, bs, np.asarray(x_mean, float), np.asarray(x_scale, float),
                   np.asarray(y_lo, float), np.asarray(y_hi, float), L, lam)

    def copy(self):
        return MlpModel([W.copy() for W in self.Ws], [b.copy() for b in self.bs], self.x_mean,
                        self.x_scale, self.y_lo, self.y_hi, self.L, self.lam, dict(self.meta))

    def normalize_x(self, X):
        return (np.asarray(X, float) - self.x_mean) / self.x_scale

    def denormalize_x(self, Xn):
        return np.asarray(Xn) * self.x_scale + self.x_mean

    def normalize_y(self, Y):
        return (np.asarray(Y, float) - self.y_lo) / (self.y_hi - self.y_lo)

    def denormalize_y(self, Yn):
        return np.asarray(Yn) * (self.y_hi - self.y_lo) + self.y_lo

    def forward_normalized(self, Xn):
        return forward(self.Ws, self.bs, np.atleast_2d(Xn))[0]

    def predict_raw(self, X):
        """Un-clamped (alpha, r, p) rows for raw feature rows."""
        return self.denormalize_y(self.forward_normalized(self.normalize_x(np.atleast_2d(X))))

    def clamp(self, Y):
        lo = np.array([ALPHA_MIN, self.L + R_MARGIN, P_MIN])
        hi = np.array([ALPHA_MAX, self.lam - HILL_WIDTH, P_MAX])
        return np.clip(Y, lo, hi)

    def to_dict(self):
        return {
            "format_version": FORMAT_VERSION,
            "layer_sizes": self.sizes,
            "weights": [W.tolist() for W in self.Ws],
            "biases": [b.tolist() for b in self.bs],
            "x_mean": self.x_mean.tolist(), "x_scale": self.x_scale.tolist(),
            "y_lo": self.y_lo.tolist(), "y_hi": self.y_hi.tolist(),
            "L": self.L, "lam": self.lam,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format_version") != FORMAT_VERSION:
            raise DomainError(f"unsupported model format version {d.get('format_version')!r}")
        m = cls([np.array(W, float) for W in d["weights"]], [np.array(b, float) for b in d["biases"]],
                np.array(d["x_mean"]), np.array(d["x_scale"]), np.array(d["y_lo"]),
                np.array(d["y_hi"]), d["L"], d["lam"], d.get("meta", {}))
        if m.sizes != d["layer_sizes"]:
            raise DomainError("layer sizes do not match the stored weights")
        return m

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def predict(model: MlpModel, state: PlatoonState) -> PotentialSpec:
    """Potential parameters for ``state``, clamped into the feasibility box."""
    x = features(state)
    if x.size != model.sizes[0]:
        raise DomainError(f"model expects {model.sizes[0]} inputs, state gives {x.size}")
    a, r, p = model.clamp(model.predict_raw(x))[0]
    return PotentialSpec.performance(a, r, p, model.L, model.lam)


def gradient_check(model: MlpModel, x, target, step: float = 1e-5) -> float:
    """Max relative error between backprop and central-difference gradients.

    ``x`` and ``target`` are one normalized sample.
    """
    x = np.atleast_2d(np.asarray(x, float))
    t = np.atleast_2d(np.asarray(target, float))
    pred, cache = forward(model.Ws, model.bs, x)
    dWs, dbs = backward(model.Ws, cache, pred, t)
    worst = 0.0
    for params, grads in ((model.Ws, dWs), (model.bs, dbs)):
        for P, G in zip(params, grads):
            for idx in np.ndindex(P.shape):
                old = P[idx]
                P[idx] = old + step
                up = mse(forward(model.Ws, model.bs, x)[0], t)
                P[idx] = old - step
                down = mse(forward(model.Ws, model.bs, x)[0], t)
                P[idx] = old
                num = (up - down) / (2 * step)
                err = abs(num - G[idx]) / max(abs(num) + abs(G[idx]), 1e-7)
                worst = max(worst, err)
    return worst


def train(dataset: Dataset, cfg: TrainConfig = TrainConfig(), hidden=(32, 16),
          split=None) -> MlpModel:
    """Fit the MLP on the training split with early stopping on validation MSE.

    Returns the snapshot with the best validation loss; training stops when
    the training MSE drops below ``cfg.target_mse``, after ``cfg.max_epochs``,
    or after ``cfg.patience`` epochs without validation improvement.
    """
    if len(dataset) == 0:
        raise DomainError("empty dataset")
    split = split or tuple(dataset.meta.get("dataset", {}).get("split", (0.85, 0.075, 0.075)))
    tr, va, te = dataset.split(split, cfg.seed)
    Xn, Yn = dataset.Xn, dataset.Yn
    if len(va) == 0:
        va = tr
    sizes = [Xn.shape[1], *hidden, Yn.shape[1]]
    L, lam = dataset.meta.get("L", 5.0), dataset.meta.get("lam", 20.0)
    model = MlpModel.initialize(sizes, dataset.x_mean, dataset.x_scale, dataset.y_lo, dataset.y_hi,
                                cfg.seed, L, lam)
    rng = np.random.default_rng(cfg.seed + 1)
    params = model.Ws + model.bs
    m1 = [np.zeros_like(P) for P in params]
    m2 = [np.zeros_like(P) for P in params]
    b1, b2, eps = 0.9, 0.999, 1e-8
    t = 0

    def loss(idx):
        return mse(model.forward_normalized(Xn[idx]), Yn[idx])

    best, best_val, best_epoch, stale = model.copy(), loss(va), 0, 0
    best_curve = [best_val]
    train_curve = []
    epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(tr)
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            pred, cache = forward(model.Ws, model.bs, Xn[idx])
            dWs, dbs = backward(model.Ws, cache, pred, Yn[idx])
            grads = dWs + dbs
            t += 1
            for P, G, M, S in zip(params, grads, m1, m2):
                if cfg.optimizer == "sgd":
                    P -= cfg.learning_rate * G
                    continue
                M *= b1
                M += (1 - b1) * G
                S *= b2
                S += (1 - b2) * G * G
                P -= cfg.learning_rate * (M / (1 - b1 ** t)) / (np.sqrt(S / (1 - b2 ** t)) + eps)
        train_mse, val_mse = loss(tr), loss(va)
        if not (np.isfinite(train_mse) and np.isfinite(val_mse)):
            raise TrainingError("training loss became non-finite", epoch)
        train_curve.append(train_mse)
        if val_mse < best_val:
            best, best_val, best_epoch, stale = model.copy(), val_mse, epoch, 0
        else:
            stale += 1
        best_curve.append(best_val)
        if train_mse < cfg.target_mse or stale >= cfg.patience:
            break

    def final(idx):
        return mse(best.forward_normalized(Xn[idx]), Yn[idx]) if len(idx) else None

    best.meta = {
        "train_config": asdict(cfg), "hidden": list(hidden), "split": list(split),
        "epochs_run": epoch, "best_epoch": best_epoch,
        "train_mse": final(tr), "val_mse": final(va), "test_mse": final(te),
        "best_val_curve": best_curve, "train_curve": train_curve,
        "rows": {"train": len(tr), "val": len(va), "test": len(te)},
    }
    return best
