"""Train-on-train, evaluate-on-test backtests and allocation replay."""

from __future__ import annotations

import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..agents import Agent, build_agent
from ..data import DataSplit, ReturnMatrix
from ..envsim import EnvConfig, Environment, rebalance_step
from ..errors import DimensionMismatch, SimplexViolation
from ..metrics import MetricsReport, compute_report
from ..reward import DEFAULT_ETA, DsrState, dsr_update
from .config import ExperimentConfig, derive_seed

logger = logging.getLogger(__name__)

UTILITIES = ("terminal_log_wealth", "dsr_sum")


@dataclass
class SeedResult:
    seed: int
    derived_seed: int
    dates: list
    equity: list
    metrics: MetricsReport | None
    trace: list
    tickers: tuple
    faults: list = field(default_factory=list)
    training_log: list = field(default_factory=list)
    elapsed: float = 0.0

    def __eq__(self, other):
        if not isinstance(other, SeedResult):
            return NotImplemented
        a, b = self.__dict__.copy(), other.__dict__.copy()
        a.pop("elapsed"), b.pop("elapsed")
        return a == b


@dataclass
class BacktestResult:
    config: ExperimentConfig
    config_hash: str
    seeds: list
    metadata: dict = field(default_factory=dict)

    def metric_table(self) -> dict:
        return {r.seed: r.metrics for r in self.seeds}


def worker_count(n_jobs: int) -> int:
    env = os.environ.get("SIMREAL_THREADS")
    cap = int(env) if env and env.isdigit() and int(env) > 0 else (os.cpu_count() or 1)
    return max(1, min(cap, n_jobs))


def run_episode(agent: Agent, segment: ReturnMatrix, env_config: EnvConfig, seed: int = 0) -> Environment:
    """Drive ``agent`` greedily through one episode and return the finished environment."""
    env = Environment(env_config, segment, seed)
    obs = env.reset()
    agent.reset(env)
    while not env.done:
        obs = env.step(agent.act(obs)).observation
    return env


def _run_seed(config: ExperimentConfig, data: DataSplit, seed: int, agent: Agent | None) -> SeedResult:
    started = time.perf_counter()
    derived = derive_seed(config.master_seed, seed)
    if agent is None:
        spec = dict(config.agent)
        spec.setdefault("epochs", config.epochs)
        agent = build_agent(spec)
    training_log = agent.fit(data.train, config.env, derived)
    env = run_episode(agent, data.test, config.env, derived)
    returns = env.net_returns()
    metrics = compute_report(returns, config.periods_per_year) if returns.size >= 2 else None
    faults = [d for d in training_log if d.get("fault") or d.get("env_fault")]
    faults = [{"phase": "train", "update": d["update"], "cause": d.get("fault") or d.get("env_fault")}
              for d in faults]
    if env.fault is not None:
        faults.append({"phase": "test", **env.fault.as_dict()})
    first = config.env.lookback
    dates = [str(d) for d in data.test.dates[first - 1:first - 1 + len(env.equity_history)]]
    return SeedResult(
        seed=seed,
        derived_seed=derived,
        dates=dates,
        equity=[float(x) for x in env.equity_history],
        metrics=metrics,
        trace=env.trace,
        tickers=env.tickers,
        faults=faults,
        training_log=training_log,
        elapsed=time.perf_counter() - started,
    )


def run_backtest(config: ExperimentConfig, data: DataSplit, agent_factory=None) -> BacktestResult:
    """Fit on ``data.train`` and evaluate once on ``data.test`` for every seed.

    The gap segment is never handed to the agent or the environment. Seeds run
    in a thread pool capped by ``SIMREAL_THREADS``; results keep seed order.
    """
    started = time.time()

    def job(seed):
        agent = agent_factory() if agent_factory is not None else None
        return _run_seed(config, data, seed, agent)

    workers = worker_count(len(config.seeds))
    if workers == 1:
        blocks = [job(s) for s in config.seeds]
    else:
        with ThreadPoolExecutor(workers) as pool:
            blocks = list(pool.map(job, config.seeds))
    meta = {
        "started": started,
        "wall_clock_seconds": time.time() - started,
        "workers": workers,
        "train_rows": data.train.n_periods,
        "gap_rows": data.gap.n_periods,
        "test_rows": data.test.n_periods,
    }
    return BacktestResult(config, config.hash(), blocks, meta)


def evaluate_allocation_sequence(W, returns, fee_rate: float = 0.0,
                                 utility: str = "terminal_log_wealth",
                                 initial_weights=None, eta: float = DEFAULT_ETA) -> float:
    """Realized utility of holding row ``k`` of ``W`` over return row ``k``.

    Replays the environment dynamics starting from uniform holdings (or
    ``initial_weights``) with unit equity.
    """
    W = np.asarray(W, dtype=float)
    R = np.asarray(returns, dtype=float)
    if W.ndim != 2 or W.shape != R.shape:
        raise DimensionMismatch(f"allocation matrix {W.shape} vs returns {R.shape}")
    if utility not in UTILITIES:
        raise ValueError(f"utility must be one of {UTILITIES}")
    bad = np.flatnonzero((np.abs(W.sum(axis=1) - 1.0) > 1e-9) | (W.min(axis=1) < -1e-12)
                         | ~np.all(np.isfinite(W), axis=1))
    if bad.size:
        raise SimplexViolation(f"row {int(bad[0])} of the allocation matrix is not on the simplex")
    n = W.shape[1]
    drift = np.full(n, 1.0 / n) if initial_weights is None else np.asarray(initial_weights, float)
    equity = 1.0
    state = DsrState(eta=eta)
    dsr_total = 0.0
    for w, r in zip(W, R):
        out = rebalance_step(equity, drift, w, r, fee_rate)
        if not out["equity"] > 0:
            return -math.inf
        reward, state = dsr_update(state, math.log(out["equity"] / equity))
        dsr_total += reward
        equity, drift = out["equity"], out["holdings"]
    if utility == "terminal_log_wealth":
        return math.log(equity)
    return dsr_total


def rerun(result: BacktestResult, data: DataSplit) -> BacktestResult:
    """Re-execute an archived configuration (same seeds) for audit comparison."""
    return run_backtest(result.config, data)
