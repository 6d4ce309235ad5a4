"""The twelve acceptance criteria, each at its stated tolerance.

Every test records one PASS/FAIL line (printed inline and again in the
pytest terminal summary) before asserting.
"""

import itertools
import math
import time

import numpy as np
import pytest

from conftest import make_returns, record_acceptance
from oracles import (
    close,
    finite_difference_grads,
    gradient_rel_error,
    grid_min_variance,
    mdd_all_pairs,
    metrics_by_definition,
    random_psd,
    two_asset_optimum,
)
from simreal.agents import A2CAgent, A2CConfig, ActorCriticPolicy, LayeredNetwork, UniformBuyHold
from simreal.agents.baselines import MvoRebalance
from simreal.agents.a2c import train_a2c
from simreal.configfile import load_split
from simreal.data import compute_returns, split_periods, synthetic_prices
from simreal.envsim import EnvConfig, Environment
from simreal.harness import (
    ExperimentConfig,
    StressScenario,
    load_result,
    persist_result,
    render_report,
    run_backtest,
    stress_test,
)
from simreal.harness.backtest import run_episode
from simreal.metrics import METRIC_NAMES, compute_report, max_drawdown
from simreal.mpt import MvoProblem, efficient_frontier, return_range, solve_mvo, solve_mvo_cardinality
from simreal.reward import DsrState, dsr_update

DEFAULT_SPLIT = (("2017-01-01", "2021-12-31"), ("2022-01-01", "2022-12-31"), ("2023-01-01", "2023-12-31"))


def _violation(problem, w):
    w = np.asarray(w)
    v = max(abs(w.sum() - 1.0), float(np.max(problem.lower - w)), float(np.max(w - problem.upper)), 0.0)
    if problem.target_return is not None:
        v = max(v, abs(float(problem.mu @ w) - problem.target_return))
    return v


# --- 1 ----------------------------------------------------------------------

def test_ac01_mvo_matches_grid_search():
    rng = np.random.default_rng(2024)
    started = time.perf_counter()
    worst_gap = worst_violation = 0.0
    beats_grid = True
    for i in range(25):
        n = 3 + i % 3
        C = random_psd(rng, n)
        mu = rng.uniform(0.0, 0.002, n)
        lower = upper = None
        if i % 5 == 4:
            upper = np.full(n, 0.6)
        lo_r, hi_r = return_range(mu, np.zeros(n) if lower is None else lower,
                                  np.ones(n) if upper is None else upper)
        target = lo_r + rng.uniform(0.3, 0.7) * (hi_r - lo_r)
        problem = MvoProblem(mu, C, target, lower, upper)
        w = solve_mvo(problem).weights
        obj = problem.objective(w)
        grid_obj, _ = grid_min_variance(C, mu, target, lower, upper)
        worst_gap = max(worst_gap, abs(obj - grid_obj))
        beats_grid &= obj <= grid_obj + 1e-12
        worst_violation = max(worst_violation, _violation(problem, w))
    elapsed = time.perf_counter() - started
    ok = worst_gap <= 1e-4 and worst_violation <= 1e-8 and beats_grid and elapsed < 60
    record_acceptance(1, "MVO vs grid oracle", ok,
                      f"max|obj-grid|={worst_gap:.2e} max_violation={worst_violation:.1e} {elapsed:.1f}s")
    assert ok


# --- 2 ----------------------------------------------------------------------

def test_ac02_cardinality_within_five_percent():
    rng = np.random.default_rng(77)
    started = time.perf_counter()
    worst_ratio = 0.0
    support_ok = True
    for i in range(25):
        C = random_psd(rng, 4)
        mu = rng.uniform(0.0, 0.002, 4)
        target = None
        if i % 2:
            # a target every pair can reach is not guaranteed; pick one inside some pair's range
            a, b = rng.choice(4, 2, replace=False)
            target = float(mu[a] + rng.uniform(0.2, 0.8) * (mu[b] - mu[a]))
        exact = min(two_asset_optimum(C, a, b, mu, target) for a, b in itertools.combinations(range(4), 2))
        problem = MvoProblem(mu, C, target, max_assets=2)
        w = solve_mvo_cardinality(problem)
        support_ok &= len(w.support()) <= 2
        worst_ratio = max(worst_ratio, problem.objective(w.weights) / exact)
    elapsed = time.perf_counter() - started
    ok = worst_ratio <= 1.05 and support_ok and elapsed < 30
    record_acceptance(2, "cardinality heuristic bound", ok,
                      f"max heuristic/exact={worst_ratio:.6f} {elapsed:.1f}s")
    assert ok


# --- 3 ----------------------------------------------------------------------

def test_ac03_frontier_monotone():
    rng = np.random.default_rng(303)
    worst_drop = 0.0
    failures = 0
    for _ in range(10):
        n = int(rng.integers(3, 7))
        C = random_psd(rng, n)
        mu = rng.uniform(-0.001, 0.002, n)
        points = efficient_frontier(mu, C, 20)
        failures += sum(p.error is not None for p in points)
        gmv = solve_mvo(MvoProblem(mu, C)).weights
        gmv_return = float(mu @ gmv)
        above = [p for p in points if p.target_return >= gmv_return]
        for p, q in zip(above, above[1:]):
            worst_drop = max(worst_drop, p.variance - q.variance)
    ok = failures == 0 and worst_drop <= 1e-8
    record_acceptance(3, "frontier monotonicity", ok, f"max variance drop={worst_drop:.1e} failed={failures}")
    assert ok


# --- 4 ----------------------------------------------------------------------

def test_ac04_metrics_oracle():
    rng = np.random.default_rng(404)
    mismatches = []
    mdd_exact = True
    for i in range(1000):
        T = int(rng.integers(5, 501))
        r = rng.normal(rng.uniform(-0.002, 0.002), rng.uniform(0.001, 0.05), T)
        if i % 10 == 0:
            r[rng.integers(0, T, size=max(1, T // 5))] = 0.0
        if i % 50 == 1:
            r = np.abs(r)  # no negative returns: undefined downside ratios
        report = compute_report(r, 252)
        expected = metrics_by_definition(r, 252)
        for name in METRIC_NAMES:
            if not close(report.metric(name), expected[name], 1e-12):
                mismatches.append((i, name, report.metric(name), expected[name]))
        equity = np.concatenate([[1.0], np.cumprod(1.0 + r)])
        mdd_exact &= max_drawdown(equity) == mdd_all_pairs(equity)
    hand = max_drawdown([1, 1.2, 0.9, 1.1])
    hand_ok = abs(hand - (-0.25)) <= 1e-15
    ok = not mismatches and mdd_exact and hand_ok
    record_acceptance(4, "metrics oracle", ok,
                      f"mismatches={len(mismatches)} mdd_exact={mdd_exact} hand_mdd={hand!r}")
    assert ok, mismatches[:5]


# --- 5 ----------------------------------------------------------------------

def test_ac05_dsr_units():
    zero, _ = dsr_update(DsrState(A=0.0, B=1.0, t=1), 0.0)
    tenth, _ = dsr_update(DsrState(A=0.0, B=1.0, t=1), 0.1)
    state = DsrState()
    finite = True
    for _ in range(10_000):
        d, state = dsr_update(state, 0.001)
        finite &= math.isfinite(d)
    ok = zero == 0.0 and abs(tenth - 0.1) <= 1e-15 and finite
    record_acceptance(5, "DSR unit behavior", ok, f"D(0)={zero!r} D(0.1)={tenth!r} constant-stream finite={finite}")
    assert ok


# --- 6 ----------------------------------------------------------------------

def _replay(segment, actions, fee, lookback=1, initial=1000.0):
    env = Environment(EnvConfig(fee_rate=fee, lookback=lookback, initial_equity=initial), segment)
    for a in actions:
        env.step(a)
    return env


def test_ac06_conservation_and_fee_drag():
    rng = np.random.default_rng(606)
    worst_rel = 0.0
    monotone = True
    for _ in range(100):
        T, n = int(rng.integers(5, 60)), int(rng.integers(2, 6))
        R = rng.normal(0.0, 0.03, size=(T + 1, n))
        seg = make_returns(R)
        actions = rng.dirichlet(np.ones(n), size=T)
        env = _replay(seg, actions, 0.0)
        expected = 1000.0
        for w, r in zip(actions, R[1:]):
            expected *= 1.0 + sum(wi * ri for wi, ri in zip(w, r))
        worst_rel = max(worst_rel, abs(env.equity - expected) / expected)
        finals = [_replay(seg, actions, fee).equity for fee in (0.0, 1e-4, 1e-3, 5e-3)]
        monotone &= all(a >= b for a, b in zip(finals, finals[1:]))
    ok = worst_rel <= 1e-10 and monotone
    record_acceptance(6, "environment conservation", ok, f"max rel err={worst_rel:.1e} fee-drag monotone={monotone}")
    assert ok


# --- 7 ----------------------------------------------------------------------

def test_ac07_gradient_check():
    rng = np.random.default_rng(707)
    started = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        depth = int(rng.integers(1, 4))
        dims = [int(d) for d in rng.integers(1, 7, size=depth + 1)]
        hidden = str(rng.choice(["tanh", "sigmoid", "linear"]))
        out_act = str(rng.choice(["linear", "tanh", "sigmoid"]))
        net = LayeredNetwork.build(dims, hidden, out_act, rng)
        x = rng.normal(size=dims[0])
        upstream = rng.normal(size=dims[-1])
        _, tape = net.forward(x, cache=True)
        analytic, _ = net.backward(tape, upstream)
        numeric = finite_difference_grads(net, x, upstream, h=1e-5)
        worst = max(worst, gradient_rel_error(analytic, numeric))
    elapsed = time.perf_counter() - started
    ok = worst < 1e-4 and elapsed < 30
    record_acceptance(7, "gradient check", ok, f"max rel err={worst:.1e} {elapsed:.1f}s")
    assert ok


# --- 8 ----------------------------------------------------------------------

def corner_segment(T=64):
    return make_returns(np.tile([0.01, -0.01], (T, 1)), tickers=("UP", "DOWN"))


def corner_weight(seed, updates=500):
    seg = corner_segment()
    cfg = EnvConfig(fee_rate=0.0, lookback=1)
    policy = ActorCriticPolicy.create(2, 1, A2CConfig(rollout_len=16), seed=seed,
                                      standardize_on=seg.values)
    train_a2c(policy, seg, cfg, epochs=10_000, seed=seed, max_updates=updates)
    env = Environment(cfg, seg, seed)
    obs = env.reset()
    weights = []
    while not env.done:
        w = policy.act(obs, "deterministic").weights
        weights.append(w[0])
        obs = env.step(w).observation
    return float(np.mean(weights))


@pytest.mark.slow
def test_ac08_corner_environment():
    started = time.perf_counter()
    weights = [corner_weight(seed) for seed in range(10)]
    elapsed = time.perf_counter() - started
    hits = sum(w >= 0.9 for w in weights)
    ok = hits >= 8 and elapsed < 300
    record_acceptance(8, "corner environment learning", ok,
                      f"{hits}/10 seeds >= 0.9 (min {min(weights):.3f}) {elapsed:.0f}s")
    assert ok


# --- 9 ----------------------------------------------------------------------

def momentum_split(data_seed):
    series = synthetic_prices(3, 1800, start="2017-01-02", drift=0.0002, vol=0.01, corr=0.3,
                              regime_drift=0.004, regime_switch_prob=0.005, seed=data_seed)
    return split_periods(compute_returns(series), *DEFAULT_SPLIT)


def test_momentum_split_has_full_test_year():
    split = momentum_split(100)
    assert split.test.n_periods > 200 and split.train.n_periods > 1200


@pytest.mark.slow
def test_ac09_synthetic_momentum():
    started = time.perf_counter()
    env_cfg = EnvConfig(fee_rate=1e-3, lookback=20)
    wins, rows = 0, []
    for seed in range(10):
        split = momentum_split(100 + seed)
        agent = A2CAgent(A2CConfig(), epochs=60)
        agent.fit(split.train, env_cfg, seed)
        learned = run_episode(agent, split.test, env_cfg, seed).equity
        passive = run_episode(UniformBuyHold(), split.test, env_cfg, seed).equity
        wins += learned > passive
        rows.append(f"{learned / env_cfg.initial_equity - 1:+.3f}/{passive / env_cfg.initial_equity - 1:+.3f}")
    elapsed = time.perf_counter() - started
    ok = wins >= 7 and elapsed < 900
    record_acceptance(9, "synthetic momentum vs buy-and-hold", ok, f"{wins}/10 wins {elapsed:.0f}s")
    assert ok, rows


# --- 10 ---------------------------------------------------------------------

def _small_a2c():
    return A2CAgent(A2CConfig(hidden=(16,), rollout_len=16), epochs=2)


def _log_bytes(log):
    return repr(log).encode()


def test_ac10_protocol_integrity():
    split = momentum_split(1)
    env_cfg = EnvConfig(fee_rate=1e-3, lookback=10)
    rng = np.random.default_rng(1010)

    def train_log(data):
        return _log_bytes(_small_a2c().fit(data.train, env_cfg, 5))

    base = train_log(split)
    noisy_gap = type(split)(split.train, split.gap.with_values(rng.normal(0, 0.5, split.gap.values.shape)),
                            split.test, split.boundaries)
    noisy_test = type(split)(split.train, split.gap,
                             split.test.with_values(rng.normal(0, 0.5, split.test.values.shape)),
                             split.boundaries)
    diag_ok = train_log(noisy_gap) == base and train_log(noisy_test) == base

    seg = split.test
    L = env_cfg.lookback
    lookahead_ok = True
    for _ in range(50):
        t = int(rng.integers(L, seg.n_periods))
        future = int(rng.integers(t, seg.n_periods))
        env_a = Environment(env_cfg, seg)
        mutated = np.array(seg.values)
        mutated[future] += rng.normal(0, 0.2, seg.n_assets)
        env_b = Environment(env_cfg, seg.with_values(mutated))
        obs_a, obs_b = env_a.observe(), env_b.observe()
        while obs_a.t < t:
            w = np.full(seg.n_assets, 1.0 / seg.n_assets)
            obs_a, obs_b = env_a.step(w).observation, env_b.step(w).observation
        lookahead_ok &= obs_a.t == obs_b.t == t
        lookahead_ok &= np.array_equal(obs_a.window, obs_b.window)
        lookahead_ok &= np.array_equal(obs_a.current_weights, obs_b.current_weights)
    ok = diag_ok and lookahead_ok
    record_acceptance(10, "protocol integrity", ok, f"diagnostics unchanged={diag_ok} no-lookahead={lookahead_ok}")
    assert ok


# --- 11 ---------------------------------------------------------------------

def test_ac11_audit_round_trip(tmp_path):
    config = ExperimentConfig(
        env=EnvConfig(fee_rate=1e-3, lookback=10),
        agent={"kind": "a2c", "hidden": [16], "rollout_len": 16},
        seeds=(0, 1), master_seed=11, epochs=2,
        data={"source": "synthetic", "n_assets": 3, "n_periods": 1800, "start": "2017-01-02",
              "drift": 0.0003, "vol": 0.01, "corr": 0.2, "regime_drift": 0.002,
              "regime_switch_prob": 0.01, "kind": "simple", "policy": "intersect"},
    )
    result = run_backtest(config, load_split(config))
    path = persist_result(result, tmp_path / "run.json")
    loaded = load_result(path)
    table, csv_text = render_report(result)
    table2, csv_text2 = render_report(loaded)
    worst = 0.0
    for a, b in zip(result.seeds, loaded.seeds):
        for name in METRIC_NAMES:
            x, y = a.metrics.metric(name), b.metrics.metric(name)
            worst = max(worst, 0.0 if x is None and y is None else abs(x - y))
    render_ok = table == table2 and csv_text == csv_text2
    # re-execute from the archived configuration alone
    again = run_backtest(loaded.config, load_split(loaded.config))
    rerun_worst = 0.0
    for a, b in zip(loaded.seeds, again.seeds):
        for name in METRIC_NAMES:
            x, y = a.metrics.metric(name), b.metrics.metric(name)
            rerun_worst = max(rerun_worst, 0.0 if x is None and y is None else abs(x - y))
    hash_ok = again.config_hash == loaded.config_hash
    ok = worst <= 1e-10 and render_ok and rerun_worst <= 1e-10 and hash_ok
    record_acceptance(11, "audit round trip", ok,
                      f"load err={worst:.1e} byte-identical={render_ok} rerun err={rerun_worst:.1e}")
    assert ok


# --- 12 ---------------------------------------------------------------------

def test_ac12_stress_identity():
    split = momentum_split(12)
    env_cfg = EnvConfig(fee_rate=1e-3, lookback=20)
    T = split.test.n_periods
    scenarios = [StressScenario("vol_scale", {"k": 1.0}),
                 StressScenario("block_bootstrap", {"block_length": T})]
    identical = True
    for agent in (UniformBuyHold(), MvoRebalance(frequency=21, estimation_window=252)):
        agent.fit(split.train, env_cfg, 0)
        report = stress_test(agent, split.test, scenarios, env_cfg, seeds=[0, 1, 2])
        for sr in report.scenarios:
            for v in sr.variants:
                identical &= v.metrics == report.baseline and v.final_equity == report.baseline_equity
    record_acceptance(12, "stress identity", identical, "vol_scale k=1 and block length T match baseline exactly")
    assert identical
