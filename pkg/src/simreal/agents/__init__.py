"""Decision policies and the registry the harness builds them from."""

from __future__ import annotations

import numpy as np

from ..data import ReturnMatrix
from ..envsim import EnvConfig, Environment, Observation
from .a2c import A2CConfig, ActorCriticPolicy, Trajectory, a2c_update, softmax, train_a2c
from .baselines import (
    Agent,
    MvoRebalance,
    UniformBuyHold,
    baseline_mvo_rebalance,
    baseline_uniform_buy_hold,
)
from .network import Adam, LayeredNetwork, backprop, forward

__all__ = [
    "A2CAgent", "A2CConfig", "ActorCriticPolicy", "Adam", "Agent", "LayeredNetwork",
    "MvoRebalance", "Trajectory", "UniformBuyHold", "a2c_update", "backprop",
    "baseline_mvo_rebalance", "baseline_uniform_buy_hold", "build_agent", "forward",
    "softmax", "train_a2c",
]


class A2CAgent(Agent):
    """Trains an actor-critic policy on the training segment, then acts greedily."""

    name = "a2c"
    stochastic_training = True

    def __init__(self, config: A2CConfig | None = None, epochs: int = 10, max_updates: int | None = None):
        self.config = config or A2CConfig()
        self.epochs = epochs
        self.max_updates = max_updates
        self.policy: ActorCriticPolicy | None = None

    def fit(self, train: ReturnMatrix, env_config: EnvConfig, seed: int = 0) -> list[dict]:
        values = train.simple()
        if env_config.allow_cash:
            values = np.column_stack([values, np.zeros(values.shape[0])])
        rng = np.random.default_rng(seed)
        self.policy = ActorCriticPolicy.create(values.shape[1], env_config.lookback, self.config,
                                               seed=rng, standardize_on=values)
        return train_a2c(self.policy, train, env_config, epochs=self.epochs,
                         seed=int(rng.integers(2**32)), max_updates=self.max_updates)

    def act(self, obs: Observation) -> np.ndarray:
        if self.policy is None:
            raise RuntimeError("agent has not been fitted")
        return self.policy.act(obs, "deterministic").weights


AGENT_KINDS = ("uniform_buy_hold", "mvo_rebalance", "a2c")


def build_agent(spec: dict) -> Agent:
    """Instantiate an agent from a flat spec such as ``{"kind": "a2c", "epochs": 5}``."""
    spec = dict(spec)
    kind = spec.pop("kind", "uniform_buy_hold")
    if kind == "uniform_buy_hold":
        return UniformBuyHold()
    if kind == "mvo_rebalance":
        freq = spec.get("frequency", 21)
        return MvoRebalance(None if freq in (None, 0, "inf", "none") else int(freq),
                            int(spec.get("estimation_window", 252)),
                            spec.get("target_return"))
    if kind == "a2c":
        fields = A2CConfig.__dataclass_fields__
        cfg = {k: v for k, v in spec.items() if k in fields}
        if "hidden" in cfg:
            cfg["hidden"] = tuple(int(h) for h in cfg["hidden"])
        max_updates = spec.get("max_updates")
        return A2CAgent(A2CConfig(**cfg), int(spec.get("epochs", 10)),
                        None if max_updates is None else int(max_updates))
    raise ValueError(f"unknown agent kind {kind!r}; expected one of {AGENT_KINDS}")
