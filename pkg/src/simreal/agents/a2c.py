"""Advantage actor-critic over simplex allocations.

The actor emits logits; exploration adds Gaussian noise in logit space and the
allocation is the softmax of the (noisy) logits, so every action lies on the
simplex. The log-likelihood used for the policy gradient is that of the
Gaussian logit sample. The entropy bonus is the Shannon entropy of the
noise-free allocation, which pulls the policy toward diversification.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..data import ReturnMatrix
from ..envsim import EnvConfig, Environment, Observation
from ..mpt import WeightVector
from .network import Adam, LayeredNetwork

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "simreal-a2c-checkpoint"
CHECKPOINT_VERSION = 1


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - np.max(z, axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def entropy_and_grad(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Shannon entropy of softmax(z) row-wise and its gradient w.r.t. z."""
    p = softmax(z)
    logp = np.log(np.clip(p, 1e-300, None))
    H = -np.sum(p * logp, axis=-1)
    grad = -p * (logp + H[..., None])
    return H, grad


@dataclass
class A2CConfig:
    hidden: tuple[int, ...] = (64, 64)
    activation: str = "tanh"
    exploration_std: float = 0.5
    gamma: float = 0.99
    actor_lr: float = 3e-4
    critic_lr: float = 1e-3
    entropy_coeff: float = 0.01
    rollout_len: int = 32
    normalize_advantage: bool = True
    max_grad_norm: float | None = 1.0


@dataclass
class Trajectory:
    features: list = field(default_factory=list)
    logits: list = field(default_factory=list)  # sampled (noisy) logits
    actions: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    values: list = field(default_factory=list)
    dones: list = field(default_factory=list)
    last_value: float = 0.0

    def __len__(self) -> int:
        return len(self.rewards)

    def append(self, feat, logit, action, reward, value, done) -> None:
        self.features.append(feat)
        self.logits.append(logit)
        self.actions.append(action)
        self.rewards.append(float(reward))
        self.values.append(float(value))
        self.dones.append(bool(done))


def _clip_norm(grads: list[np.ndarray], max_norm: float | None) -> tuple[list[np.ndarray], float]:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if max_norm is not None and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        grads = [g * scale for g in grads]
    return grads, norm


class ActorCriticPolicy:
    def __init__(self, actor: LayeredNetwork, critic: LayeredNetwork, config: A2CConfig,
                 n_assets: int, lookback: int,
                 feature_mean: np.ndarray | None = None, feature_std: np.ndarray | None = None):
        self.actor = actor
        self.critic = critic
        self.config = config
        self.n_assets = n_assets
        self.lookback = lookback
        self.feature_mean = np.zeros(n_assets) if feature_mean is None else np.asarray(feature_mean, float)
        self.feature_std = np.ones(n_assets) if feature_std is None else np.asarray(feature_std, float)
        self.actor_opt = Adam(actor.parameters(), lr=config.actor_lr)
        self.critic_opt = Adam(critic.parameters(), lr=config.critic_lr)

    @classmethod
    def create(cls, n_assets: int, lookback: int, config: A2CConfig | None = None,
               seed: int | np.random.Generator = 0, standardize_on: np.ndarray | None = None) -> "ActorCriticPolicy":
        config = config or A2CConfig()
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        d = n_assets * lookback + n_assets
        actor = LayeredNetwork.build([d, *config.hidden, n_assets], config.activation, "linear", rng)
        critic = LayeredNetwork.build([d, *config.hidden, 1], config.activation, "linear", rng)
        mean = std = None
        if standardize_on is not None:
            mean = standardize_on.mean(axis=0)
            std = standardize_on.std(axis=0)
            std = np.where(std > 1e-12, std, 1.0)
        return cls(actor, critic, config, n_assets, lookback, mean, std)

    @property
    def gamma(self) -> float:
        return self.config.gamma

    @property
    def feature_dim(self) -> int:
        return self.n_assets * (self.lookback + 1)

    def features(self, obs: Observation) -> np.ndarray:
        window = (np.asarray(obs.window) - self.feature_mean) / self.feature_std
        return np.concatenate([window.reshape(-1), np.asarray(obs.current_weights, float)])

    def logits(self, feat: np.ndarray) -> np.ndarray:
        return self.actor.forward(feat)

    def value(self, feat: np.ndarray) -> float:
        return float(self.critic.forward(feat)[0])

    def sample(self, feat: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        z = self.logits(feat)
        u = z + self.config.exploration_std * rng.standard_normal(z.shape)
        return u, softmax(u)

    def act(self, obs: Observation, mode: str = "deterministic",
            rng: np.random.Generator | None = None) -> WeightVector:
        feat = self.features(obs)
        if mode == "stochastic":
            if rng is None:
                raise ValueError("stochastic mode needs an rng")
            _, w = self.sample(feat, rng)
        elif mode == "deterministic":
            w = softmax(self.logits(feat))
        else:
            raise ValueError(f"unknown mode {mode!r}")
        return WeightVector(w)

    # --- checkpoints ---

    def to_dict(self) -> dict:
        c = self.config
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "n_assets": self.n_assets,
            "lookback": self.lookback,
            "config": {
                "hidden": list(c.hidden), "activation": c.activation,
                "exploration_std": c.exploration_std, "gamma": c.gamma,
                "actor_lr": c.actor_lr, "critic_lr": c.critic_lr,
                "entropy_coeff": c.entropy_coeff, "rollout_len": c.rollout_len,
                "normalize_advantage": c.normalize_advantage, "max_grad_norm": c.max_grad_norm,
            },
            "feature_mean": self.feature_mean.tolist(),
            "feature_std": self.feature_std.tolist(),
            "actor": self.actor.to_dict(),
            "critic": self.critic.to_dict(),
            "actor_opt": self.actor_opt.state_dict(),
            "critic_opt": self.critic_opt.state_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ActorCriticPolicy":
        if d.get("format") != CHECKPOINT_FORMAT:
            raise ValueError("not an actor-critic checkpoint")
        if d.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {d.get('version')}")
        cfg = dict(d["config"])
        cfg["hidden"] = tuple(cfg["hidden"])
        pol = cls(LayeredNetwork.from_dict(d["actor"]), LayeredNetwork.from_dict(d["critic"]),
                  A2CConfig(**cfg), d["n_assets"], d["lookback"],
                  np.array(d["feature_mean"]), np.array(d["feature_std"]))
        if "actor_opt" in d:
            pol.actor_opt.load_state_dict(d["actor_opt"])
            pol.critic_opt.load_state_dict(d["critic_opt"])
        return pol

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "ActorCriticPolicy":
        return cls.from_dict(json.loads(Path(path).read_text()))


def td_advantages(rewards: Sequence[float], values: Sequence[float], dones: Sequence[bool],
                  last_value: float, gamma: float) -> tuple[np.ndarray, np.ndarray]:
    """One-step targets ``r + gamma V(s')`` (V = 0 past a terminal step) and advantages."""
    r = np.asarray(rewards, float)
    v = np.asarray(values, float)
    nxt = np.append(v[1:], last_value)
    nxt = np.where(np.asarray(dones, bool), 0.0, nxt)
    targets = r + gamma * nxt
    return targets, targets - v


def policy_gradients(policy: ActorCriticPolicy, traj: Trajectory) -> tuple[list, list, dict]:
    """Gradients of the actor and critic losses for one rollout (no step taken)."""
    cfg = policy.config
    X = np.asarray(traj.features, float)
    U = np.asarray(traj.logits, float)
    T = X.shape[0]
    targets, adv = td_advantages(traj.rewards, traj.values, traj.dones, traj.last_value, cfg.gamma)
    raw_adv = adv.copy()
    if cfg.normalize_advantage and T > 1:
        sd = adv.std()
        if sd > 1e-12:
            adv = (adv - adv.mean()) / sd

    z, a_tape = policy.actor.forward(X, cache=True)
    var = cfg.exploration_std ** 2
    logp = -0.5 * np.sum((U - z) ** 2, axis=1) / var
    H, dH = entropy_and_grad(z)
    actor_loss = -float(np.mean(adv * logp)) - cfg.entropy_coeff * float(np.mean(H))
    g_z = -(adv[:, None] * (U - z) / var) / T - cfg.entropy_coeff * dH / T
    actor_grads, _ = policy.actor.backward(a_tape, g_z)

    v, c_tape = policy.critic.forward(X, cache=True)
    err = v[:, 0] - targets
    critic_loss = 0.5 * float(np.mean(err ** 2))
    critic_grads, _ = policy.critic.backward(c_tape, (err / T)[:, None])
    diag = {
        "n_steps": T,
        "actor_loss": actor_loss,
        "critic_loss": critic_loss,
        "entropy": float(np.mean(H)),
        "mean_advantage": float(np.mean(raw_adv)),
        "mean_reward": float(np.mean(traj.rewards)),
    }
    return actor_grads, critic_grads, diag


def a2c_update(policy: ActorCriticPolicy, traj: Trajectory) -> tuple[ActorCriticPolicy, dict]:
    """One synchronous gradient step on a rollout. Non-finite gradients skip the step."""
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    with np.errstate(invalid="ignore", over="ignore"):
        actor_grads, critic_grads, diag = policy_gradients(policy, traj)
    finite = all(np.all(np.isfinite(g)) for g in (*actor_grads, *critic_grads))
    if not finite:
        logger.warning("non-finite gradient; update skipped")
        diag.update(actor_grad_norm=None, critic_grad_norm=None, skipped=True,
                    fault="NonFiniteGradient")
        return policy, diag
    actor_grads, an = _clip_norm(actor_grads, policy.config.max_grad_norm)
    critic_grads, cn = _clip_norm(critic_grads, policy.config.max_grad_norm)
    policy.actor_opt.step(actor_grads)
    policy.critic_opt.step(critic_grads)
    diag.update(actor_grad_norm=an, critic_grad_norm=cn, skipped=False)
    return policy, diag


def train_a2c(policy: ActorCriticPolicy, segment: ReturnMatrix, env_config: EnvConfig, *,
              epochs: int = 10, seed: int = 0, max_updates: int | None = None) -> list[dict]:
    """Run episodes over ``segment`` with on-policy rollouts; returns the update log."""
    env = Environment(env_config, segment, seed)
    rng = np.random.default_rng(seed)
    log: list[dict] = []
    rollout_len = policy.config.rollout_len
    for epoch in range(epochs):
        obs = env.reset()
        while not env.done:
            traj = Trajectory()
            for _ in range(rollout_len):
                feat = policy.features(obs)
                value = policy.value(feat)
                u, w = policy.sample(feat, rng)
                res = env.step(w)
                traj.append(feat, u, w, res.reward, value, res.done)
                obs = res.observation
                if res.done:
                    break
            traj.last_value = 0.0 if env.done else policy.value(policy.features(obs))
            _, diag = a2c_update(policy, traj)
            diag["epoch"] = epoch
            diag["update"] = len(log)
            if env.fault is not None:
                diag["env_fault"] = env.fault.cause
            log.append(diag)
            if max_updates is not None and len(log) >= max_updates:
                return log
    return log
