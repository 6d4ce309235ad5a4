"""Online reward signals: Differential Sharpe Ratio and log wealth growth."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import NonFiniteInput, NonPositiveEquity

DEFAULT_ETA = 0.01
VARIANCE_FLOOR = 1e-8


@dataclass(frozen=True)
class DsrState:
    """Exponential moving averages of returns (``A``) and squared returns (``B``)."""

    A: float = 0.0
    B: float = 0.0
    eta: float = DEFAULT_ETA
    t: int = 0

    def __post_init__(self):
        if not 0.0 < self.eta < 1.0:
            raise ValueError(f"eta must be in (0, 1), got {self.eta}")

    @property
    def sharpe(self) -> float | None:
        """Running Sharpe estimate ``A / sqrt(B - A^2)``; None while variance is zero."""
        var = self.B - self.A * self.A
        return self.A / math.sqrt(var) if var > 0 else None


def dsr_update(state: DsrState, r: float) -> tuple[float, DsrState]:
    """Reward for return ``r`` given the pre-update averages, plus the new state.

    The first update (``t == 0``) only seeds the averages and pays 0.
    """
    r = float(r)
    if not math.isfinite(r):
        raise NonFiniteInput(f"return {r} is not finite")
    dA = r - state.A
    dB = r * r - state.B
    if state.t == 0:
        reward = 0.0
    else:
        var = max(state.B - state.A * state.A, VARIANCE_FLOOR)
        reward = (state.B * dA - 0.5 * state.A * dB) / var ** 1.5
    new = DsrState(state.A + state.eta * dA, state.B + state.eta * dB, state.eta, state.t + 1)
    return reward, new


def log_return_reward(equity_before: float, equity_after: float) -> float:
    if not equity_before > 0 or not equity_after > 0:
        raise NonPositiveEquity(f"equity must be positive, got {equity_before} -> {equity_after}")
    return math.log(equity_after / equity_before)
