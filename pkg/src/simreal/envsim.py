"""Episodic market environment with simplex actions and proportional costs.

One call to :meth:`Environment.step` executes, in order: projection of the
action onto the simplex, a rebalance from the drifted holdings (cost charged on
traded notional), growth of the rebalanced book over the next return row, and
drift of the weights. Observations only ever contain rows already applied.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import ReturnMatrix
from .errors import EpisodeFinished, InsufficientHistory, NonFiniteInput
from .mpt import WeightVector
from .reward import DEFAULT_ETA, DsrState, dsr_update

logger = logging.getLogger(__name__)

CASH_TICKER = "CASH"
REWARD_KINDS = ("dsr", "log_return")


@dataclass(frozen=True)
class EnvConfig:
    fee_rate: float = 0.001
    initial_equity: float = 100_000.0
    lookback: int = 20
    allow_cash: bool = False
    gamma: float = 0.99
    reward_kind: str = "dsr"
    dsr_eta: float = DEFAULT_ETA

    def __post_init__(self):
        if not 0.0 <= self.fee_rate < 1.0:
            raise ValueError(f"fee_rate must be in [0, 1), got {self.fee_rate}")
        if not self.initial_equity > 0:
            raise ValueError("initial_equity must be positive")
        if int(self.lookback) != self.lookback or self.lookback < 1:
            raise ValueError("lookback must be a positive integer")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must be in [0, 1)")
        if self.reward_kind not in REWARD_KINDS:
            raise ValueError(f"reward_kind must be one of {REWARD_KINDS}")


@dataclass(frozen=True)
class EnvState:
    t: int
    equity: float
    holdings: np.ndarray
    done: bool


@dataclass(frozen=True)
class Observation:
    window: np.ndarray
    current_weights: np.ndarray
    t: int


@dataclass(frozen=True)
class FaultRecord:
    cause: str
    t: int
    last_state: EnvState
    detail: str = ""

    def as_dict(self) -> dict:
        return {
            "cause": self.cause,
            "t": self.t,
            "detail": self.detail,
            "last_state": {
                "t": self.last_state.t,
                "equity": self.last_state.equity,
                "holdings": self.last_state.holdings.tolist(),
                "done": self.last_state.done,
            },
        }


@dataclass(frozen=True)
class StepResult:
    observation: Observation
    reward: float
    done: bool
    info: dict = field(default_factory=dict)
    fault: FaultRecord | None = None


# --- simplex ----------------------------------------------------------------

def _project(v: np.ndarray) -> np.ndarray:
    if np.all(v >= 0) and abs(v.sum() - 1.0) <= 1e-12:
        return v.copy()
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def project_to_simplex(raw) -> WeightVector:
    """Euclidean projection onto ``{w : sum(w) = 1, w >= 0}``."""
    v = np.asarray(raw, dtype=float).reshape(-1)
    if v.size == 0 or not np.all(np.isfinite(v)):
        raise NonFiniteInput("cannot project a non-finite or empty vector")
    return WeightVector(_project(v))


def rebalance_step(equity: float, drifted: np.ndarray, target: np.ndarray,
                   returns: np.ndarray, fee_rate: float) -> dict:
    """Pure one-period dynamics shared by the environment and replay evaluation."""
    turnover = float(np.sum(np.abs(target - drifted)))
    cost = fee_rate * equity * turnover
    after_cost = equity - cost
    gross = float(target @ returns)
    new_equity = after_cost * (1.0 + gross)
    growth = 1.0 + gross
    if growth > 0:
        holdings = target * (1.0 + returns) / growth
    else:
        holdings = target.copy()
    return {
        "turnover": turnover,
        "cost": cost,
        "gross_return": gross,
        "equity": new_equity,
        "holdings": holdings,
    }


# --- environment ------------------------------------------------------------

class Environment:
    """Single-owner mutable episode over one return segment."""

    def __init__(self, config: EnvConfig, segment: ReturnMatrix, seed: int = 0):
        if segment.n_periods < config.lookback + 1:
            raise InsufficientHistory(
                f"segment has {segment.n_periods} rows, need lookback+1 = {config.lookback + 1}")
        self.config = config
        self.segment = segment
        self.seed = seed
        values = segment.simple()
        tickers = segment.tickers
        if config.allow_cash:
            values = np.column_stack([values, np.zeros(values.shape[0])])
            tickers = (*tickers, CASH_TICKER)
        values.setflags(write=False)
        self.returns = values
        self.tickers = tuple(tickers)
        self.dates = segment.dates
        self.rng = np.random.default_rng(seed)
        self.reset()

    @property
    def n_assets(self) -> int:
        return self.returns.shape[1]

    @property
    def n_steps(self) -> int:
        return self.returns.shape[0] - self.config.lookback

    def initial_weights(self) -> np.ndarray:
        n_risky = len(self.segment.tickers)
        w = np.zeros(self.n_assets)
        w[:n_risky] = 1.0 / n_risky
        return w

    def reset(self) -> Observation:
        self.rng = np.random.default_rng(self.seed)
        self.t = self.config.lookback
        self.equity = float(self.config.initial_equity)
        self.holdings = self.initial_weights()
        self.done = False
        self.fault: FaultRecord | None = None
        self.dsr = DsrState(eta=self.config.dsr_eta)
        self.equity_history = [self.equity]
        self.trace: list[dict] = []
        return self.observe()

    def state(self) -> EnvState:
        h = self.holdings.copy()
        h.setflags(write=False)
        return EnvState(self.t, self.equity, h, self.done)

    def observe(self) -> Observation:
        L = self.config.lookback
        window = self.returns[self.t - L:self.t]
        w = self.holdings.copy()
        w.setflags(write=False)
        return Observation(window, w, self.t)

    def step(self, action) -> StepResult:
        if self.done:
            raise EpisodeFinished(f"episode finished at t={self.t}")
        before = self.state()
        a = np.asarray(action, dtype=float).reshape(-1)
        if a.size != self.n_assets:
            raise ValueError(f"action has {a.size} entries, environment has {self.n_assets} assets")
        if not np.all(np.isfinite(a)):
            return self._trip("NonFiniteInput", before, "action contains NaN or Inf")
        target = _project(a)
        row = self.returns[self.t]
        out = rebalance_step(self.equity, self.holdings, target, row, self.config.fee_rate)
        equity_before = self.equity
        self.equity = out["equity"]
        self.holdings = out["holdings"]
        self.t += 1
        self.done = self.t >= self.returns.shape[0]
        self.equity_history.append(self.equity)
        self.trace.append({
            "t": self.t - 1,
            "date": str(self.dates[self.t - 1]),
            "equity": self.equity,
            "gross_return": out["gross_return"],
            "cost": out["cost"],
            "turnover": out["turnover"],
            "weights": target.tolist(),
        })
        reward = self._reward(equity_before, self.equity)
        info = {
            "gross_return": out["gross_return"],
            "cost_paid": out["cost"],
            "turnover": out["turnover"],
            "equity": self.equity,
        }
        result = StepResult(self.observe(), reward, self.done, info)
        return fault_guard(self, result, before)

    def _reward(self, before: float, after: float) -> float:
        if not (after > 0 and before > 0 and math.isfinite(after)):
            return 0.0
        net_log = math.log(after / before)
        if self.config.reward_kind == "log_return":
            return net_log
        reward, self.dsr = dsr_update(self.dsr, net_log)
        return reward

    def _trip(self, cause: str, last: EnvState, detail: str = "") -> StepResult:
        self.done = True
        self.fault = FaultRecord(cause, self.t, last, detail)
        logger.warning("fault %s at t=%d: %s", cause, self.t, detail)
        return StepResult(self.observe(), 0.0, True, {
            "gross_return": 0.0, "cost_paid": 0.0, "turnover": 0.0, "equity": self.equity,
        }, self.fault)

    # --- exports ---

    def net_returns(self) -> np.ndarray:
        e = np.asarray(self.equity_history)
        return e[1:] / e[:-1] - 1.0

    def write_trace(self, path) -> None:
        write_trace_csv(self.trace, self.tickers, path)


def fault_guard(env: Environment, result: StepResult, last_valid: EnvState | None = None) -> StepResult:
    """Turn numeric anomalies into a terminal fault record on the environment."""
    last = last_valid if last_valid is not None else env.state()
    cause = detail = None
    if not math.isfinite(env.equity) or not math.isfinite(result.reward):
        cause, detail = "NonFinite", f"equity={env.equity}, reward={result.reward}"
    elif env.equity <= 0:
        cause, detail = "Bankruptcy", f"equity={env.equity}"
    else:
        h = env.holdings
        if not np.all(np.isfinite(h)) or abs(h.sum() - 1.0) > 1e-9 or h.min() < -1e-12:
            cause, detail = "InvariantViolation", f"holdings={h.tolist()}"
    if cause is None:
        return result
    env.done = True
    env.fault = FaultRecord(cause, env.t, last, detail)
    logger.warning("fault %s at t=%d: %s", cause, env.t, detail)
    reward = result.reward if math.isfinite(result.reward) else 0.0
    return replace(result, reward=reward, done=True, fault=env.fault)


def reset(config: EnvConfig, segment: ReturnMatrix, seed: int = 0) -> tuple[Environment, Observation]:
    env = Environment(config, segment, seed)
    return env, env.observe()


TRACE_FIELDS = ("t", "date", "equity", "gross_return", "cost", "turnover")


def write_trace_csv(trace: list[dict], tickers, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*TRACE_FIELDS, *[f"w_{t}" for t in tickers]])
        for rec in trace:
            w.writerow([rec["t"], rec["date"], *[repr(float(rec[k])) for k in TRACE_FIELDS[2:]],
                        *[repr(float(x)) for x in rec["weights"]]])


def read_trace_csv(path) -> tuple[list[dict], tuple[str, ...]]:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        tickers = tuple(h[2:] for h in header[len(TRACE_FIELDS):])
        trace = []
        for row in reader:
            rec = {"t": int(row[0]), "date": row[1]}
            for k, v in zip(TRACE_FIELDS[2:], row[2:len(TRACE_FIELDS)]):
                rec[k] = float(v)
            rec["weights"] = [float(x) for x in row[len(TRACE_FIELDS):]]
            trace.append(rec)
    return trace, tickers
