"""Versioned JSON archives with per-seed CSV trace sidecars, and report rendering."""

from __future__ import annotations

import io
import json
from dataclasses import asdict
from pathlib import Path

from ..envsim import read_trace_csv, write_trace_csv
from ..errors import ArchiveIOError, SchemaVersionMismatch
from ..metrics import MetricsReport, fmt_value, format_table, reports_to_csv
from .backtest import BacktestResult, SeedResult
from .config import ExperimentConfig, StressScenario, config_hash
from .stress import ScenarioResult, StressReport, VariantResult

SCHEMA_VERSION = 1
BACKTEST_KIND = "simreal.backtest"
STRESS_KIND = "simreal.stress"


def _metrics(m: MetricsReport | None):
    return None if m is None else m.as_dict()


def _unmetrics(d):
    return None if d is None else MetricsReport.from_dict(d)


def trace_path(archive: Path, seed: int) -> Path:
    return archive.with_name(f"{archive.stem}.seed{seed}.trace.csv")


def _dump(doc: dict, path: Path) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(doc, indent=1, sort_keys=True, allow_nan=False) + "\n")
    except OSError as exc:
        raise ArchiveIOError(f"cannot write {path}: {exc}") from exc


def _read(path: Path, kind: str) -> dict:
    try:
        text = Path(path).read_bytes().decode("utf-8")
    except OSError as exc:
        raise ArchiveIOError(f"cannot read {path}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise ArchiveIOError(f"{path} is not UTF-8", exc.start) from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ArchiveIOError(f"{path} is truncated or corrupt: {exc.msg}",
                             len(text[:exc.pos].encode("utf-8"))) from exc
    if not isinstance(doc, dict) or doc.get("kind") != kind:
        raise ArchiveIOError(f"{path} is not a {kind} archive")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise SchemaVersionMismatch(
            f"{path} has schema version {doc.get('schema_version')!r}, expected {SCHEMA_VERSION}")
    return doc


# --- backtest -----------------------------------------------------------------

def persist_result(result: BacktestResult, path) -> Path:
    """Write ``path`` (JSON) plus one trace CSV per seed beside it."""
    path = Path(path)
    seeds = []
    for block in result.seeds:
        sidecar = trace_path(path, block.seed)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            write_trace_csv(block.trace, block.tickers, sidecar)
        except OSError as exc:
            raise ArchiveIOError(f"cannot write {sidecar}: {exc}") from exc
        seeds.append({
            "seed": block.seed,
            "derived_seed": block.derived_seed,
            "dates": block.dates,
            "equity": block.equity,
            "metrics": _metrics(block.metrics),
            "tickers": list(block.tickers),
            "faults": block.faults,
            "training_log": block.training_log,
            "elapsed": block.elapsed,
            "trace_file": sidecar.name,
        })
    doc = {
        "kind": BACKTEST_KIND,
        "schema_version": SCHEMA_VERSION,
        "config_hash": result.config_hash,
        "config": result.config.to_dict(),
        "metadata": result.metadata,
        "seeds": seeds,
    }
    _dump(doc, path)
    return path


def load_result(path) -> BacktestResult:
    path = Path(path)
    doc = _read(path, BACKTEST_KIND)
    config = ExperimentConfig.from_dict(doc["config"])
    if config_hash(config.to_dict()) != doc["config_hash"]:
        raise ArchiveIOError(f"{path}: config hash does not match the stored configuration")
    blocks = []
    for s in doc["seeds"]:
        sidecar = path.with_name(s["trace_file"])
        try:
            trace, tickers = read_trace_csv(sidecar)
        except (OSError, ValueError, IndexError, StopIteration) as exc:
            raise ArchiveIOError(f"cannot read trace sidecar {sidecar}: {exc}") from exc
        blocks.append(SeedResult(
            seed=s["seed"], derived_seed=s["derived_seed"], dates=s["dates"], equity=s["equity"],
            metrics=_unmetrics(s["metrics"]), trace=trace, tickers=tuple(s["tickers"]),
            faults=s["faults"], training_log=s["training_log"], elapsed=s["elapsed"],
        ))
    return BacktestResult(config, doc["config_hash"], blocks, doc["metadata"])


def model_name(result: BacktestResult) -> str:
    return str(result.config.agent.get("kind", "agent"))


def summary_rows(result: BacktestResult) -> list[tuple[str, MetricsReport]]:
    name = model_name(result)
    return [(f"{name}[seed={b.seed}]", b.metrics) for b in result.seeds if b.metrics is not None]


def render_report(result: BacktestResult) -> tuple[str, str]:
    """(fixed-width table, metrics CSV). Pure function of the stored result."""
    rows = summary_rows(result)
    head = f"config_hash {result.config_hash}\n"
    table = head + format_table(rows)
    faults = [(b.seed, f) for b in result.seeds for f in b.faults]
    for seed, f in faults:
        table += f"fault seed={seed} phase={f.get('phase')} cause={f.get('cause')}\n"
    return table, reports_to_csv(rows)


# --- stress -------------------------------------------------------------------

def stress_to_dict(report: StressReport) -> dict:
    return {
        "kind": STRESS_KIND,
        "schema_version": SCHEMA_VERSION,
        "config_hash": report.config_hash,
        "baseline": _metrics(report.baseline),
        "baseline_equity": report.baseline_equity,
        "scenarios": [{
            "scenario": sr.scenario.to_dict(),
            "variants": [{**asdict(v), "metrics": _metrics(v.metrics)} for v in sr.variants],
            "aggregate": sr.aggregate,
        } for sr in report.scenarios],
    }


def stress_from_dict(doc: dict) -> StressReport:
    scenarios = []
    for sr in doc["scenarios"]:
        variants = [VariantResult(**{**v, "metrics": _unmetrics(v["metrics"])}) for v in sr["variants"]]
        scenarios.append(ScenarioResult(StressScenario.from_dict(sr["scenario"]), variants, sr["aggregate"]))
    return StressReport(_unmetrics(doc["baseline"]), doc["baseline_equity"], scenarios, doc["config_hash"])


def persist_stress(report: StressReport, path) -> Path:
    path = Path(path)
    _dump(stress_to_dict(report), path)
    return path


def load_stress(path) -> StressReport:
    return stress_from_dict(_read(Path(path), STRESS_KIND))


def render_stress(report: StressReport) -> str:
    buf = io.StringIO()
    buf.write(f"config_hash {report.config_hash}\n")
    base = report.baseline
    buf.write(f"baseline final_equity={fmt_value(report.baseline_equity, 2)} "
              f"sharpe={fmt_value(base.sharpe if base else None, 4)}\n")
    for sr in report.scenarios:
        for label, stats in sr.aggregate.items():
            s, e = stats["sharpe"], stats["final_equity"]
            buf.write(f"{sr.scenario.kind:16s} {label:14s} n={s['n']} "
                      f"sharpe mean={fmt_value(s['mean'], 4)} std={fmt_value(s['std'], 4)} "
                      f"final_equity mean={fmt_value(e['mean'], 2)}\n")
    return buf.getvalue()
