"""INI configuration: declared keys, typed parsing, overrides, and data loading."""

from __future__ import annotations

import configparser
from pathlib import Path

from .data import (
    DataSplit,
    ReturnMatrix,
    compute_returns,
    load_ohlcv,
    split_periods,
    synthetic_prices,
    validate_alignment,
)
from .envsim import EnvConfig
from .errors import AlignmentError, ConfigError
from .harness.config import ExperimentConfig, StressScenario

# section -> key -> default (the default's type drives parsing; None means optional float)
SCHEMA: dict[str, dict[str, object]] = {
    "data": {
        "source": "synthetic", "path": "", "kind": "simple", "policy": "intersect",
        "n_assets": 4, "n_periods": 1800, "start": "2017-01-02", "drift": 0.0003,
        "vol": 0.01, "corr": 0.2, "regime_drift": 0.0, "regime_switch_prob": 0.0,
        "frontier_points": 20,
    },
    "split": {
        "train_start": "2017-01-01", "train_end": "2021-12-31",
        "gap_start": "2022-01-01", "gap_end": "2022-12-31",
        "test_start": "2023-01-01", "test_end": "2023-12-31",
    },
    "env": {
        "fee_rate": 0.001, "initial_equity": 100_000.0, "lookback": 20, "allow_cash": False,
        "gamma": 0.99, "reward_kind": "dsr", "dsr_eta": 0.01,
    },
    "agent": {
        "kind": "uniform_buy_hold", "frequency": 21, "estimation_window": 252,
        "target_return": None, "hidden": "64,64", "activation": "tanh",
        "exploration_std": 0.5, "actor_lr": 3e-4, "critic_lr": 1e-3,
        "entropy_coeff": 0.01, "rollout_len": 32, "normalize_advantage": True,
        "max_grad_norm": 1.0,
    },
    "train": {"epochs": 10, "max_updates": None},
    "stress": {"scenarios": "vol_scale(k=2); jump_inject(size=-0.1); block_bootstrap(block_length=21,draws=5); fee_sweep(fees=0|0.001|0.005)",
               "seeds": ""},
    "seeds": {"master_seed": 0, "seeds": "0"},
}
NULLABLE_INT = {("agent", "frequency"), ("train", "max_updates")}


def _coerce(section: str, key: str, raw: str):
    default = SCHEMA[section][key]
    raw = raw.strip()
    try:
        if (section, key) in NULLABLE_INT:
            return None if raw.lower() in ("", "none", "inf") else int(raw)
        if default is None:
            return None if raw.lower() in ("", "none") else float(raw)
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no", "on", "off"):
                raise ValueError(raw)
            return low in ("true", "1", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{section}.{key}: cannot parse {raw!r} as {type(default).__name__}",
                          (f"{section}.{key}",)) from None


def defaults() -> dict:
    return {s: dict(keys) for s, keys in SCHEMA.items()}


def parse_override(text: str) -> tuple[str, str, str]:
    """``section.key=value`` -> parts; raises KeyError for undeclared keys."""
    if "=" not in text or "." not in text.split("=", 1)[0]:
        raise KeyError(f"override {text!r} is not of the form section.key=value")
    lhs, value = text.split("=", 1)
    section, key = lhs.strip().split(".", 1)
    if section not in SCHEMA or key not in SCHEMA[section]:
        raise KeyError(f"override {lhs!r} does not name a declared key")
    return section, key, value


def load_settings(path=None, overrides=()) -> dict:
    settings = defaults()
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from None
        for section in parser.sections():
            if section not in SCHEMA:
                raise ConfigError(f"unknown config section [{section}]", (section,))
            for key, raw in parser.items(section):
                if key not in SCHEMA[section]:
                    raise ConfigError(f"unknown config key {section}.{key}", (f"{section}.{key}",))
                settings[section][key] = _coerce(section, key, raw)
    for item in overrides:
        section, key, value = parse_override(item)
        settings[section][key] = _coerce(section, key, value)
    return settings


def parse_int_list(text: str, key: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in str(text).replace(";", ",").split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"{key}: expected a comma-separated integer list", (key,)) from None


def parse_scenarios(text: str) -> tuple[StressScenario, ...]:
    """``kind(a=1,b=2); kind2(fees=0|0.001)`` -> scenarios (``|`` separates list items)."""
    out = []
    for i, chunk in enumerate(c.strip() for c in text.split(";")):
        if not chunk:
            continue
        kind, _, rest = chunk.partition("(")
        params = {}
        body = rest.rstrip(")").strip()
        if body:
            for pair in body.split(","):
                if "=" not in pair:
                    raise ConfigError(f"stress parameter {pair!r} lacks '='", ("stress.scenarios",))
                k, v = (x.strip() for x in pair.split("=", 1))
                if k == "fees":
                    params[k] = [float(x) for x in v.split("|")]
                elif k == "seed":
                    params[k] = int(v)
                else:
                    params[k] = v if k == "index" else float(v)
        seed = int(params.pop("seed", i))
        for key in ("block_length", "draws", "index"):
            if key in params and params[key] is not None:
                params[key] = int(float(params[key]))
        try:
            out.append(StressScenario(kind.strip(), params, seed))
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc), ("stress.scenarios",)) from None
    return tuple(out)


def agent_spec(settings: dict) -> dict:
    a = settings["agent"]
    kind = a["kind"]
    if kind == "uniform_buy_hold":
        return {"kind": kind}
    if kind == "mvo_rebalance":
        return {"kind": kind, "frequency": a["frequency"], "estimation_window": a["estimation_window"],
                "target_return": a["target_return"]}
    if kind == "a2c":
        spec = {k: a[k] for k in ("activation", "exploration_std", "actor_lr", "critic_lr",
                                  "entropy_coeff", "rollout_len", "normalize_advantage", "max_grad_norm")}
        spec["kind"] = kind
        spec["hidden"] = list(parse_int_list(a["hidden"], "agent.hidden"))
        spec["max_updates"] = settings["train"]["max_updates"]
        return spec
    raise ConfigError(f"unknown agent kind {kind!r}", ("agent.kind",))


def experiment_config(settings: dict, seeds_override=None) -> ExperimentConfig:
    s = settings["split"]
    e = settings["env"]
    try:
        env = EnvConfig(**e)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [env]: {exc}", tuple(f"env.{k}" for k in e)) from None
    seeds = seeds_override if seeds_override is not None else parse_int_list(settings["seeds"]["seeds"], "seeds.seeds")
    data = {k: v for k, v in settings["data"].items() if k != "frontier_points"}
    return ExperimentConfig(
        env=env,
        split={
            "train": (s["train_start"], s["train_end"]),
            "gap": (s["gap_start"], s["gap_end"]),
            "test": (s["test_start"], s["test_end"]),
        },
        agent=agent_spec(settings),
        seeds=seeds,
        master_seed=settings["seeds"]["master_seed"],
        epochs=settings["train"]["epochs"],
        stress=parse_scenarios(settings["stress"]["scenarios"]),
        data=data,
    )


def synth_series(data: dict, master_seed: int):
    return synthetic_prices(
        int(data["n_assets"]), int(data["n_periods"]), start=data["start"], drift=data["drift"],
        vol=data["vol"], corr=data["corr"], regime_drift=data["regime_drift"],
        regime_switch_prob=data["regime_switch_prob"], seed=master_seed)


def load_returns(config: ExperimentConfig) -> ReturnMatrix:
    data = config.data
    if data.get("source", "synthetic") == "synthetic":
        series = synth_series(data, config.master_seed)
    elif data["source"] == "csv":
        if not data.get("path"):
            raise ConfigError("data.path is required when data.source = csv", ("data.path",))
        series = load_ohlcv(Path(data["path"]))
    else:
        raise ConfigError(f"unknown data source {data['source']!r}", ("data.source",))
    if data.get("policy", "intersect") == "strict":
        report = validate_alignment(series, "strict")
        if not report.ok:
            ticker, day = report.failures()[0]
            raise AlignmentError(f"strict alignment: {ticker} has no row for {day}")
    return compute_returns(series, data.get("kind", "simple"))


def load_split(config: ExperimentConfig) -> DataSplit:
    return split_periods(load_returns(config), *config.split_ranges())
