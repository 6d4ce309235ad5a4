"""Batch command-line driver.

Exit codes: 0 success, 1 usage error, 2 data/config error, 3 runtime fault
(fault records are persisted before exiting).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import configfile
from .agents import A2CAgent, build_agent
from .data import load_ohlcv, validate_alignment, write_ohlcv
from .errors import SimRealError
from .harness import (
    load_result,
    persist_result,
    persist_stress,
    render_report,
    render_stress,
    run_backtest,
    stress_test,
)
from .harness.config import derive_seed
from .mpt import efficient_frontier, estimate_covariance, write_frontier_csv

logger = logging.getLogger("simreal")

VERBS = ("ingest", "frontier", "train", "backtest", "stress", "report", "synth")
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_FAULT = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="simreal", description="Portfolio optimization laboratory (batch driver).")
    p.add_argument("verb", help="one of: " + ", ".join(VERBS))
    p.add_argument("archive", nargs="?", help="archive path for 'report' (default: <out>/backtest.json)")
    p.add_argument("--config", type=Path, help="INI configuration file")
    p.add_argument("--out", type=Path, default=Path("simreal-out"), help="output directory")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key, e.g. env.fee_rate=0.002 (repeatable)")
    p.add_argument("--seeds", help="comma-separated seeds overriding seeds.seeds")
    p.add_argument("--quiet", action="store_true", help="suppress tables and progress logging")
    return p


def _emit(text: str, quiet: bool) -> None:
    if not quiet:
        sys.stdout.write(text)


def _prepare(args):
    try:
        settings = configfile.load_settings(args.config, args.overrides)
    except KeyError as exc:
        raise UsageError(exc.args[0]) from None
    seeds = None
    if args.seeds:
        try:
            seeds = tuple(int(s) for s in args.seeds.split(",") if s.strip())
        except ValueError:
            raise UsageError(f"--seeds expects integers, got {args.seeds!r}") from None
    config = configfile.experiment_config(settings, seeds)
    return settings, config


def cmd_synth(args, settings, config) -> int:
    series = configfile.synth_series(config.data, config.master_seed)
    path = args.out / "synthetic.csv"
    write_ohlcv(series, path)
    print(f"wrote {path} ({len(series)} tickers x {len(series[0])} dates)")
    return EXIT_OK


def cmd_ingest(args, settings, config) -> int:
    returns = configfile.load_returns(config)
    path = args.out / "returns.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", *returns.tickers])
        for d, row in zip(returns.dates, returns.values):
            w.writerow([str(d), *[repr(float(x)) for x in row]])
    if config.data.get("source") == "csv":
        report = validate_alignment(load_ohlcv(config.data["path"]), config.data.get("policy", "intersect"))
        missing = {t: [str(d) for d in ds] for t, ds in report.missing.items()}
    else:
        missing = {t: [] for t in returns.tickers}
    (args.out / "validation.json").write_text(json.dumps(
        {"rows": returns.n_periods, "tickers": list(returns.tickers), "kind": returns.kind,
         "missing": missing}, indent=1) + "\n")
    print(f"wrote {path} ({returns.n_periods} rows x {returns.n_assets} assets, {returns.kind} returns)")
    return EXIT_OK


def cmd_frontier(args, settings, config) -> int:
    split = configfile.load_split(config)
    train = split.train
    cov = estimate_covariance(train, repair=True)
    points = efficient_frontier(train.values.mean(axis=0), cov, settings["data"]["frontier_points"])
    path = args.out / "frontier.csv"
    write_frontier_csv(points, train.tickers, path)
    failed = sum(p.error is not None for p in points)
    print(f"wrote {path} ({len(points)} points, {failed} failed)")
    return EXIT_OK


def cmd_train(args, settings, config) -> int:
    split = configfile.load_split(config)
    spec = dict(config.agent)
    spec.setdefault("epochs", config.epochs)
    agent = build_agent(spec)
    seed = derive_seed(config.master_seed, config.seeds[0])
    log = agent.fit(split.train, config.env, seed)
    ckpt = args.out / "policy.json"
    if isinstance(agent, A2CAgent):
        agent.policy.save(ckpt)
    else:
        ckpt.write_text(json.dumps({"agent": spec}, indent=1, sort_keys=True) + "\n")
    (args.out / "training_log.json").write_text(json.dumps(log, indent=1) + "\n")
    print(f"wrote {ckpt} ({len(log)} updates)")
    faults = [d for d in log if d.get("fault") or d.get("env_fault")]
    return EXIT_FAULT if faults else EXIT_OK


def cmd_backtest(args, settings, config) -> int:
    split = configfile.load_split(config)
    result = run_backtest(config, split)
    path = persist_result(result, args.out / "backtest.json")
    table, csv_text = render_report(result)
    (args.out / "summary.csv").write_text(csv_text)
    _emit(table, args.quiet)
    print(f"archive {path}")
    return EXIT_FAULT if any(b.faults for b in result.seeds) else EXIT_OK


def cmd_stress(args, settings, config) -> int:
    split = configfile.load_split(config)
    spec = dict(config.agent)
    spec.setdefault("epochs", config.epochs)
    agent = build_agent(spec)
    agent.fit(split.train, config.env, derive_seed(config.master_seed, config.seeds[0]))
    stress_seeds = configfile.parse_int_list(settings["stress"]["seeds"], "stress.seeds") or None
    report = stress_test(agent, split.test, config.stress, config.env, seeds=stress_seeds,
                         master_seed=config.master_seed, periods_per_year=config.periods_per_year)
    report.config_hash = config.hash()
    path = persist_stress(report, args.out / "stress.json")
    _emit(render_stress(report), args.quiet)
    print(f"archive {path}")
    faulted = any(v.fault for sr in report.scenarios for v in sr.variants)
    return EXIT_FAULT if faulted else EXIT_OK


def cmd_report(args) -> int:
    path = Path(args.archive) if args.archive else args.out / "backtest.json"
    result = load_result(path)
    table, csv_text = render_report(result)
    if args.quiet:
        print(f"config_hash {result.config_hash}")
    else:
        sys.stdout.write(table + "\n" + csv_text)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.verb not in VERBS:
            raise UsageError(f"unknown verb {args.verb!r}")
        if args.archive and args.verb != "report":
            raise UsageError(f"unexpected argument {args.archive!r} for {args.verb!r}")
    except UsageError as exc:
        sys.stderr.write(parser.format_usage())
        sys.stderr.write(f"simreal: error: {exc}\n")
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.verb == "report":
            return cmd_report(args)
        settings, config = _prepare(args)
        args.out.mkdir(parents=True, exist_ok=True)
        print(f"config_hash {config.hash()}")
        handler = globals()[f"cmd_{args.verb}"]
        return handler(args, settings, config)
    except UsageError as exc:
        sys.stderr.write(parser.format_usage())
        sys.stderr.write(f"simreal: error: {exc}\n")
        return EXIT_USAGE
    except SimRealError as exc:
        keys = getattr(exc, "keys", ())
        suffix = f" [keys: {', '.join(keys)}]" if keys else ""
        sys.stderr.write(f"simreal: {type(exc).__name__}: {exc}{suffix}\n")
        return EXIT_DATA
    except OSError as exc:
        sys.stderr.write(f"simreal: {exc}\n")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
