"""Experiment configuration: YAML files, named presets and dotted overrides."""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from .exceptions import DomainError
from .model import ModelParams, PlatoonState
from .objective import ObjectiveSpec
from .potential import LEGACY_SCALE, PotentialSpec
from .simulator import SimConfig
from .surrogate import DatasetSpec, TrainConfig

FORMAT_VERSION = 1

# counter slots for deriving independent streams from the config seed
SEED_SLOTS = {"initial": 0, "optimizer": 1, "dataset": 2, "train": 3}


class ConfigError(ValueError):
    def __init__(self, field_name, message):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


def derive_seed(seed: int, slot: str) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(SEED_SLOTS[slot],)).generate_state(1)[0])


_BASE = {
    "version": FORMAT_VERSION,
    "seed": 0,
    "out": "out",
    "model": asdict(ModelParams()),
    "initial": {"spacings": None, "speeds": None,
                "spacing_range": [8.0, 12.0], "speed_range": [27.0, 33.0]},
    "potential": {"kind": "optimized", "alpha": 0.05, "r": 9.0, "p": 4.0,
                  "legacy_scale": LEGACY_SCALE, "model_path": None},
    "sim": asdict(SimConfig()),
    "objective": asdict(ObjectiveSpec()),
    "optimizer": {"budget": 400, "restarts": 4},
    "dataset": {"count": 600, "spacing_range": [8.0, 12.0], "speed_range": [27.0, 33.0],
                "standstill": 5.0, "headway": 0.1, "split": [0.85, 0.075, 0.075],
                "budget": 200, "restarts": 4, "path": None},
    "train": {k: v for k, v in asdict(TrainConfig()).items() if k != "seed"},
}

PRESETS = {
    "scenario1": {"potential": {"kind": "legacy"}},
    "scenario2": {"potential": {"kind": "optimized"}},
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def set_dotted(d: dict, key: str, raw: str):
    """Apply ``a.b.c=value`` with the value parsed as YAML."""
    parts = key.split(".")
    node = d
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            raise ConfigError(key, "unknown section")
        node = node[p]
    if parts[-1] not in node:
        raise ConfigError(key, "unknown field")
    node[parts[-1]] = yaml.safe_load(raw) if isinstance(raw, str) else raw


@dataclass
class ExperimentConfig:
    raw: dict = field(default_factory=lambda: copy.deepcopy(_BASE))

    # typed views, built by validate()
    params: ModelParams = None
    sim: SimConfig = None
    objective: ObjectiveSpec = None
    dataset: DatasetSpec = None
    train: TrainConfig = None

    @classmethod
    def build(cls, path=None, preset=None, overrides=()):
        raw = copy.deepcopy(_BASE)
        if preset:
            if preset not in PRESETS:
                raise ConfigError("preset", f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
            raw = _merge(raw, PRESETS[preset])
        if path:
            path = Path(path)
            if not path.exists():
                raise ConfigError("config", f"file not found: {path}")
            loaded = yaml.safe_load(path.read_text()) or {}
            if not isinstance(loaded, dict):
                raise ConfigError("config", "top level must be a mapping")
            unknown = set(loaded) - set(_BASE)
            if unknown:
                raise ConfigError(sorted(unknown)[0], "unknown section")
            raw = _merge(raw, loaded)
        for key, value in overrides:
            set_dotted(raw, key, value)
        cfg = cls(raw)
        cfg.validate()
        return cfg

    def _typed(self, name, kind, data):
        names = {f.name for f in fields(kind)}
        extra = set(data) - names
        if extra:
            raise ConfigError(f"{name}.{sorted(extra)[0]}", "unknown field")
        try:
            return kind(**data)
        except (DomainError, TypeError) as exc:
            raise ConfigError(name, str(exc)) from exc

    def validate(self):
        r = self.raw
        if r.get("version") != FORMAT_VERSION:
            raise ConfigError("version", f"expected {FORMAT_VERSION}, got {r.get('version')!r}")
        if not isinstance(r.get("seed"), int):
            raise ConfigError("seed", "must be an integer")
        self.params = self._typed("model", ModelParams, r["model"])
        self.sim = self._typed("sim", SimConfig, r["sim"])
        self.objective = self._typed("objective", ObjectiveSpec, r["objective"])
        d = dict(r["dataset"])
        self.dataset = self._typed("dataset", DatasetSpec, {
            "count": d["count"], "n": self.params.n, "spacing_range": tuple(d["spacing_range"]),
            "speed_range": tuple(d["speed_range"]), "standstill": d["standstill"],
            "headway": d["headway"], "split": tuple(d["split"]),
            "seed": derive_seed(r["seed"], "dataset")})
        self.train = self._typed("train", TrainConfig,
                                 dict(r["train"], seed=derive_seed(r["seed"], "train") % 2**31))
        pot = r["potential"]
        if pot["kind"] not in ("legacy", "performance", "optimized", "surrogate"):
            raise ConfigError("potential.kind", f"unknown kind {pot['kind']!r}")
        if pot["kind"] == "surrogate":
            if not pot.get("model_path") or not Path(pot["model_path"]).exists():
                raise ConfigError("potential.model_path", f"model file not found: {pot.get('model_path')}")
        opt = r["optimizer"]
        if opt["restarts"] < 1 or opt["budget"] < 20 * opt["restarts"]:
            raise ConfigError("optimizer.budget", "need restarts >= 1 and budget >= 20 per restart")
        self.initial_state()
        return self

    def initial_state(self) -> PlatoonState:
        ini = self.raw["initial"]
        n = self.params.n
        if ini.get("spacings") is not None or ini.get("speeds") is not None:
            s, v = ini.get("spacings"), ini.get("speeds")
            if s is None or len(s) != n - 1:
                raise ConfigError("initial.spacings", f"need {n - 1} values")
            if v is None or len(v) != n:
                raise ConfigError("initial.speeds", f"need {n} values")
        else:
            rng = np.random.default_rng(derive_seed(self.raw["seed"], "initial"))
            s = rng.uniform(*ini["spacing_range"], n - 1)
            v = rng.uniform(*ini["speed_range"], n)
        state = PlatoonState.from_spacings(s, v, time=self.sim.t0)
        bad = state.omega_violation(self.params)
        if bad:
            raise ConfigError("initial", f"state not admissible: {bad}")
        return state

    def fixed_potential(self) -> PotentialSpec | None:
        """The potential when it needs no optimizer or model; None otherwise."""
        pot = self.raw["potential"]
        if pot["kind"] == "legacy":
            return PotentialSpec.legacy(self.params.L, self.params.lam, pot["legacy_scale"])
        if pot["kind"] == "performance":
            return PotentialSpec.performance(pot["alpha"], pot["r"], pot["p"], self.params.L, self.params.lam)
        return None

    @property
    def out(self) -> Path:
        return Path(self.raw["out"])

    def dump(self) -> str:
        return yaml.safe_dump(self.raw, sort_keys=False)

    @classmethod
    def loads(cls, text: str):
        cfg = cls(yaml.safe_load(text))
        cfg.validate()
        return cfg
