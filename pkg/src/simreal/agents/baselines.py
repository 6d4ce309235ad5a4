"""Deterministic reference strategies."""

from __future__ import annotations

import logging

import numpy as np

from ..data import ReturnMatrix
from ..envsim import EnvConfig, Environment, Observation
from ..errors import SimRealError
from ..mpt import MvoProblem, estimate_covariance, solve_mvo

logger = logging.getLogger(__name__)


class Agent:
    """Minimal protocol the harness drives: fit once, then reset/act per episode."""

    name = "agent"
    stochastic_training = False

    def fit(self, train: ReturnMatrix, env_config: EnvConfig, seed: int = 0) -> list[dict]:
        return []

    def reset(self, env: Environment) -> None:
        pass

    def act(self, obs: Observation) -> np.ndarray:
        raise NotImplementedError


class UniformBuyHold(Agent):
    """Uniform allocation at the first step, then let the book drift untouched."""

    name = "uniform_buy_hold"

    def __init__(self):
        self._start = None

    def reset(self, env: Environment) -> None:
        self._start = env.initial_weights()

    def act(self, obs: Observation) -> np.ndarray:
        if self._start is not None:
            w, self._start = self._start, None
            return w
        return np.array(obs.current_weights)


def baseline_uniform_buy_hold() -> UniformBuyHold:
    return UniformBuyHold()


class MvoRebalance(Agent):
    """Minimum-variance weights re-solved every ``frequency`` steps on a trailing window.

    The history starts as the training segment and grows only with rows the
    environment has already revealed through observations.
    """

    name = "mvo_rebalance"

    def __init__(self, frequency: int | None = 21, estimation_window: int = 252,
                 target_return: float | None = None):
        if frequency is not None and frequency < 1:
            raise ValueError("frequency must be positive or None (never rebalance)")
        if estimation_window < 2:
            raise ValueError("estimation_window must be at least 2")
        self.frequency = frequency
        self.estimation_window = estimation_window
        self.target_return = target_return
        self._prefix = np.empty((0, 0))
        self.rebalances: list[int] = []

    def fit(self, train: ReturnMatrix, env_config: EnvConfig, seed: int = 0) -> list[dict]:
        values = train.simple()
        if env_config.allow_cash:
            values = np.column_stack([values, np.zeros(values.shape[0])])
        self._prefix = values
        return []

    def reset(self, env: Environment) -> None:
        self._history = [row for row in self._prefix]
        self._next_index = env.t - env.config.lookback
        self._steps = 0
        self._last = env.initial_weights()
        self.rebalances = []

    def _absorb(self, obs: Observation) -> None:
        first = obs.t - obs.window.shape[0]
        for k in range(max(self._next_index, first), obs.t):
            self._history.append(np.array(obs.window[k - first]))
        self._next_index = max(self._next_index, obs.t)

    def _solve(self) -> np.ndarray:
        hist = np.asarray(self._history[-self.estimation_window:])
        if hist.shape[0] < 2:
            raise SimRealError("not enough history to estimate moments")
        cov = estimate_covariance(hist, repair=True)
        mu = hist.mean(axis=0)
        target = self.target_return
        if target is not None:
            target = float(np.clip(target, mu.min(), mu.max()))
        return solve_mvo(MvoProblem(mu, cov, target)).weights.copy()

    def act(self, obs: Observation) -> np.ndarray:
        self._absorb(obs)
        due = self._steps == 0 if self.frequency is None else self._steps % self.frequency == 0
        self._steps += 1
        if not due:
            return np.array(obs.current_weights)
        try:
            self._last = self._solve()
            self.rebalances.append(obs.t)
        except SimRealError as exc:
            logger.warning("MVO rebalance at t=%d failed (%s); keeping previous weights", obs.t, exc)
        return self._last


def baseline_mvo_rebalance(frequency: int | None = 21, estimation_window: int = 252) -> MvoRebalance:
    return MvoRebalance(frequency, estimation_window)
