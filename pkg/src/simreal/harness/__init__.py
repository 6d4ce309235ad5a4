"""Backtest protocol, replay evaluation, stress testing and audit archives."""

from .archive import (
    SCHEMA_VERSION,
    load_result,
    load_stress,
    persist_result,
    persist_stress,
    render_report,
    render_stress,
)
from .backtest import (
    BacktestResult,
    SeedResult,
    evaluate_allocation_sequence,
    rerun,
    run_backtest,
    run_episode,
)
from .config import ExperimentConfig, StressScenario, config_hash, derive_seed
from .stress import StressReport, block_bootstrap, jump_inject, stress_test, vol_scale

__all__ = [
    "SCHEMA_VERSION", "BacktestResult", "ExperimentConfig", "SeedResult", "StressReport",
    "StressScenario", "block_bootstrap", "config_hash", "derive_seed",
    "evaluate_allocation_sequence", "jump_inject", "load_result", "load_stress",
    "persist_result", "persist_stress", "render_report", "render_stress", "rerun",
    "run_backtest", "run_episode", "stress_test", "vol_scale",
]
