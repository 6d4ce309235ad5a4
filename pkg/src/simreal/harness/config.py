"""Experiment configuration, canonical hashing and seed derivation."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from ..data import to_day
from ..envsim import EnvConfig
from ..errors import ConfigError, OverlapError

STRESS_KINDS = ("vol_scale", "jump_inject", "block_bootstrap", "fee_sweep")
DEFAULT_BLOCK_LENGTH = 21


@dataclass(frozen=True)
class StressScenario:
    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in STRESS_KINDS:
            raise ConfigError(f"unknown stress kind {self.kind!r}", ("stress",))
        p = dict(self.params)
        if self.kind == "vol_scale":
            k = float(p.get("k", 1.0))
            if not k > 0:
                raise ConfigError("vol_scale k must be > 0", ("stress",))
            p["k"] = k
        elif self.kind == "jump_inject":
            size = float(p.get("size", -0.1))
            if not size > -1.0:
                raise ConfigError("jump size must exceed -1 (a -100% move)", ("stress",))
            p["size"] = size
            if p.get("index") is not None:
                p["index"] = int(p["index"])
            else:
                p["index"] = None
        elif self.kind == "block_bootstrap":
            b = int(p.get("block_length", DEFAULT_BLOCK_LENGTH))
            if b < 1:
                raise ConfigError("block_length must be >= 1", ("stress",))
            p["block_length"] = b
            p["draws"] = int(p.get("draws", 1))
            if p["draws"] < 1:
                raise ConfigError("draws must be >= 1", ("stress",))
        elif self.kind == "fee_sweep":
            fees = [float(f) for f in p.get("fees", (0.0, 0.001, 0.005))]
            if not fees or any(not 0.0 <= f < 1.0 for f in fees):
                raise ConfigError("fees must lie in [0, 1)", ("stress",))
            p["fees"] = fees
        object.__setattr__(self, "params", p)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params), "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "StressScenario":
        return cls(d["kind"], dict(d.get("params", {})), int(d.get("seed", 0)))


def _range(r) -> tuple[str, str]:
    a, b = r
    return str(to_day(a)), str(to_day(b))


@dataclass(frozen=True)
class ExperimentConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    split: dict = field(default_factory=lambda: {
        "train": ("2017-01-01", "2021-12-31"),
        "gap": ("2022-01-01", "2022-12-31"),
        "test": ("2023-01-01", "2023-12-31"),
    })
    agent: dict = field(default_factory=lambda: {"kind": "uniform_buy_hold"})
    seeds: tuple = (0,)
    master_seed: int = 0
    epochs: int = 10
    stress: tuple = ()
    data: dict = field(default_factory=dict)
    periods_per_year: float = 252.0

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("at least one seed is required", ("seeds.seeds",))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        try:
            split = {k: _range(self.split[k]) for k in ("train", "gap", "test")}
        except KeyError as exc:
            raise ConfigError(f"split range {exc} missing", (f"split.{exc.args[0]}",)) from None
        names = ("train", "gap", "test")
        for a, b in zip(names, names[1:]):
            if split[a][0] > split[a][1]:
                raise ConfigError(f"{a} range ends before it starts", (f"split.{a}_start", f"split.{a}_end"))
            if not split[a][1] < split[b][0]:
                raise ConfigError(f"split ranges {a} and {b} overlap or are out of order",
                                  (f"split.{a}_end", f"split.{b}_start"))
        object.__setattr__(self, "split", split)
        object.__setattr__(self, "stress", tuple(
            s if isinstance(s, StressScenario) else StressScenario.from_dict(s) for s in self.stress))

    def to_dict(self) -> dict:
        return {
            "env": asdict(self.env),
            "split": {k: list(v) for k, v in self.split.items()},
            "agent": dict(self.agent),
            "seeds": list(self.seeds),
            "master_seed": self.master_seed,
            "epochs": self.epochs,
            "stress": [s.to_dict() for s in self.stress],
            "data": dict(self.data),
            "periods_per_year": self.periods_per_year,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return cls(
            env=EnvConfig(**d["env"]),
            split={k: tuple(v) for k, v in d["split"].items()},
            agent=dict(d["agent"]),
            seeds=tuple(d["seeds"]),
            master_seed=int(d["master_seed"]),
            epochs=int(d["epochs"]),
            stress=tuple(StressScenario.from_dict(s) for s in d.get("stress", [])),
            data=dict(d.get("data", {})),
            periods_per_year=float(d.get("periods_per_year", 252.0)),
        )

    def canonical_text(self) -> str:
        return canonical_json(self.to_dict())

    def hash(self) -> str:
        return config_hash(self.to_dict())

    def split_ranges(self):
        return self.split["train"], self.split["gap"], self.split["test"]


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True, allow_nan=False)


def config_hash(obj: dict) -> str:
    """SHA-256 hex digest of the canonical JSON text."""
    return hashlib.sha256(canonical_json(obj).encode("ascii")).hexdigest()


def derive_seed(master_seed: int, key: int) -> int:
    """Independent stream per (master seed, run key) via ``SeedSequence([master, key])``."""
    return int(np.random.SeedSequence([int(master_seed), int(key)]).generate_state(1, np.uint32)[0])


def check_split_order(split: dict) -> None:
    try:
        ExperimentConfig(split=split)
    except ConfigError as exc:
        raise OverlapError(str(exc)) from None
