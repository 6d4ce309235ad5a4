"""Domain-randomized stress testing of a frozen agent.

Each scenario perturbs the return data (or the fee) and re-runs the agent;
every variant is compared against the unperturbed baseline run.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..agents import Agent
from ..data import ReturnMatrix
from ..envsim import EnvConfig
from ..errors import SimRealError
from ..metrics import METRIC_NAMES, MetricsReport, compute_report
from .backtest import run_episode
from .config import StressScenario

logger = logging.getLogger(__name__)


# --- transforms (returns in, returns out) -----------------------------------

def vol_scale(values: np.ndarray, k: float) -> np.ndarray:
    """Scale deviations from the column means by ``k``; ``k = 1`` is an exact identity."""
    mean = values.mean(axis=0)
    return values + (k - 1.0) * (values - mean)


def jump_inject(values: np.ndarray, size: float, index: int) -> np.ndarray:
    out = np.array(values, dtype=float)
    out[index] = out[index] + size
    return out


def block_bootstrap(values: np.ndarray, block_length: int, rng: np.random.Generator) -> np.ndarray:
    """Moving-block resample: contiguous blocks with uniformly drawn starts, cut to length."""
    T = values.shape[0]
    b = min(block_length, T)
    n_blocks = -(-T // b)
    starts = rng.integers(0, T - b + 1, size=n_blocks)
    idx = (starts[:, None] + np.arange(b)).reshape(-1)[:T]
    return values[idx]


# --- report -------------------------------------------------------------------

@dataclass
class VariantResult:
    label: str
    seed: int
    params: dict
    metrics: MetricsReport | None
    final_equity: float | None
    deltas: dict = field(default_factory=dict)
    fault: dict | None = None


@dataclass
class ScenarioResult:
    scenario: StressScenario
    variants: list
    aggregate: dict


@dataclass
class StressReport:
    baseline: MetricsReport | None
    baseline_equity: float
    scenarios: list
    config_hash: str = ""


def _deltas(m: MetricsReport | None, base: MetricsReport | None) -> dict:
    out = {}
    for name in METRIC_NAMES:
        a = None if m is None else m.metric(name)
        b = None if base is None else base.metric(name)
        out[name] = None if a is None or b is None else a - b
    return out


def aggregate(variants: list[VariantResult]) -> dict:
    """Mean, std (ddof=0), min and max of each metric per variant label, over seeds."""
    by_label: dict[str, list[VariantResult]] = {}
    for v in variants:
        by_label.setdefault(v.label, []).append(v)
    out = {}
    for label, group in by_label.items():
        stats = {}
        for name in (*METRIC_NAMES, "final_equity"):
            if name == "final_equity":
                xs = [v.final_equity for v in group]
            else:
                xs = [v.metrics.metric(name) for v in group if v.metrics is not None]
            xs = [x for x in xs if x is not None and math.isfinite(x)]
            if xs:
                arr = np.array(xs)
                stats[name] = {"mean": float(arr.mean()), "std": float(arr.std()),
                               "min": float(arr.min()), "max": float(arr.max()), "n": len(xs)}
            else:
                stats[name] = {"mean": None, "std": None, "min": None, "max": None, "n": 0}
        out[label] = stats
    return out


def _evaluate(agent: Agent, segment: ReturnMatrix, env: EnvConfig, seed: int,
              periods_per_year: float) -> tuple[MetricsReport | None, float, dict | None]:
    e = run_episode(agent, segment, env, seed)
    r = e.net_returns()
    metrics = compute_report(r, periods_per_year) if r.size >= 2 else None
    return metrics, float(e.equity), (e.fault.as_dict() if e.fault else None)


def _variants(scenario: StressScenario, base: ReturnMatrix, env: EnvConfig, rng: np.random.Generator):
    p = scenario.params
    values = np.array(base.values)
    if scenario.kind == "vol_scale":
        yield f"k={p['k']:g}", base.with_values(vol_scale(values, p["k"])), env, {"k": p["k"]}
    elif scenario.kind == "jump_inject":
        first = env.lookback
        index = p["index"]
        if index is None:
            index = int(rng.integers(first, values.shape[0]))
        if not 0 <= index < values.shape[0]:
            raise SimRealError(f"jump index {index} outside the data")
        yield (f"size={p['size']:g}", base.with_values(jump_inject(values, p["size"], index)),
               env, {"size": p["size"], "index": index})
    elif scenario.kind == "block_bootstrap":
        for draw in range(p["draws"]):
            data = block_bootstrap(values, p["block_length"], rng)
            yield f"b={p['block_length']}", base.with_values(data), env, {
                "block_length": p["block_length"], "draw": draw}
    elif scenario.kind == "fee_sweep":
        for fee in p["fees"]:
            yield f"fee={fee:g}", base, replace(env, fee_rate=fee), {"fee_rate": fee}


def stress_test(agent: Agent, base_data: ReturnMatrix, scenarios, env: EnvConfig, *,
                seeds=None, master_seed: int = 0, periods_per_year: float = 252.0) -> StressReport:
    """Evaluate a fitted agent on perturbed copies of ``base_data``.

    Every scenario is run once per seed in ``seeds`` (default: the scenario's
    own seed); the random stream for (scenario index, seed) is derived from
    ``master_seed``. Failures inside a scenario are recorded, not raised.
    """
    base_metrics, base_equity, _ = _evaluate(agent, base_data, env, 0, periods_per_year)
    results = []
    for si, scenario in enumerate(scenarios):
        variants: list[VariantResult] = []
        for seed in (seeds if seeds is not None else [scenario.seed]):
            rng = np.random.default_rng([master_seed, si, scenario.seed, seed])
            try:
                for label, data, cfg, params in _variants(scenario, base_data, env, rng):
                    try:
                        m, eq, fault = _evaluate(agent, data, cfg, seed, periods_per_year)
                    except (SimRealError, ValueError) as exc:
                        m, eq, fault = None, None, {"cause": type(exc).__name__, "detail": str(exc)}
                    variants.append(VariantResult(label, seed, params, m, eq, _deltas(m, base_metrics), fault))
            except (SimRealError, ValueError) as exc:
                logger.warning("scenario %s failed: %s", scenario.kind, exc)
                variants.append(VariantResult("error", seed, {}, None, None, _deltas(None, None),
                                              {"cause": type(exc).__name__, "detail": str(exc)}))
        results.append(ScenarioResult(scenario, variants, aggregate(variants)))
    return StressReport(base_metrics, base_equity, results)
