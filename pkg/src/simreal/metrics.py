"""Performance statistics of a realized return series.

Conventions: arithmetic annualization (mean x P, std x sqrt(P)), sample
standard deviations (ddof=1), zero risk-free rate, and zero returns counted as
neither positive nor negative. A ratio whose denominator vanishes is reported
as ``None`` ("undefined"), never as 0 or infinity.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, fields
from typing import Iterable, Sequence

import numpy as np

from .errors import InsufficientData, NonPositiveEquity

UNDEFINED = "undefined"
DEFAULT_PERIODS_PER_YEAR = 252

# column label -> MetricsReport attribute, in export order
COLUMNS = (
    ("E[R]", "expected_return"),
    ("std(R)", "volatility"),
    ("DD", "downside_dev"),
    ("Sharpe", "sharpe"),
    ("Sortino", "sortino"),
    ("MDD", "max_drawdown"),
    ("Calmar", "calmar"),
    ("Avg+/Avg-", "avg_pos_neg"),
    ("%+ve", "pct_positive"),
)
METRIC_NAMES = tuple(attr for _, attr in COLUMNS)


@dataclass(frozen=True)
class MetricsReport:
    expected_return: float
    volatility: float
    downside_dev: float | None
    sharpe: float | None
    sortino: float | None
    max_drawdown: float
    calmar: float | None
    pct_positive: float
    avg_pos_neg: float | None
    periods_per_year: float
    n_obs: int

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    def metric(self, name: str) -> float | None:
        return getattr(self, name)


def _ratio(num: float, den: float | None) -> float | None:
    if den is None or den == 0 or not math.isfinite(den):
        return None
    with np.errstate(over="ignore"):
        q = num / den
    return q if math.isfinite(q) else None  # overflow on a subnormal denominator is undefined


def _drawdown(equity: np.ndarray) -> float:
    peak = np.maximum.accumulate(equity)
    return float(np.min(equity / peak - 1.0))


def max_drawdown(equity: Sequence[float]) -> float:
    """Most negative ``E_t / max_{s<=t} E_s - 1`` (0 for a curve that never falls)."""
    e = np.asarray(equity, dtype=float)
    if e.ndim != 1 or e.size < 1:
        raise InsufficientData("equity curve must be a non-empty 1-D series")
    if not np.all(np.isfinite(e)) or np.any(e <= 0):
        raise NonPositiveEquity("equity values must be finite and positive")
    return _drawdown(e)


def equity_curve(returns: Iterable[float], initial: float = 1.0) -> np.ndarray:
    r = np.asarray(list(returns) if not isinstance(returns, np.ndarray) else returns, dtype=float)
    return initial * np.concatenate([[1.0], np.cumprod(1.0 + r)])


def returns_from_equity(equity: Sequence[float]) -> np.ndarray:
    e = np.asarray(equity, dtype=float)
    return e[1:] / e[:-1] - 1.0


def compute_report(returns: Sequence[float], periods_per_year: float = DEFAULT_PERIODS_PER_YEAR) -> MetricsReport:
    r = np.asarray(returns, dtype=float).reshape(-1)
    if r.size < 2:
        raise InsufficientData(f"need at least 2 returns, got {r.size}")
    if not np.all(np.isfinite(r)):
        raise ValueError("returns must be finite")
    if periods_per_year <= 0:
        raise ValueError("periods_per_year must be positive")
    P = float(periods_per_year)
    root = math.sqrt(P)
    exp_ret = float(np.mean(r)) * P
    vol = float(np.std(r, ddof=1)) * root
    pos, neg = r[r > 0], r[r < 0]
    dd = float(np.std(neg, ddof=1)) * root if neg.size >= 2 else None
    eq = np.concatenate([[1.0], np.cumprod(1.0 + r)])
    mdd = _drawdown(eq) if eq.min() > 0 else -1.0
    return MetricsReport(
        expected_return=exp_ret,
        volatility=vol,
        downside_dev=dd,
        sharpe=_ratio(exp_ret, vol),
        sortino=_ratio(exp_ret, dd),
        max_drawdown=mdd,
        calmar=_ratio(exp_ret, abs(mdd)),
        pct_positive=pos.size / r.size,
        avg_pos_neg=_ratio(float(np.mean(pos)), float(np.mean(neg))) if pos.size and neg.size else None,
        periods_per_year=P,
        n_obs=int(r.size),
    )


def report_from_equity(equity: Sequence[float], periods_per_year: float = DEFAULT_PERIODS_PER_YEAR) -> MetricsReport:
    return compute_report(returns_from_equity(equity), periods_per_year)


# --- rendering --------------------------------------------------------------

def fmt_value(v, digits: int | None = None) -> str:
    if v is None:
        return UNDEFINED
    if isinstance(v, float) and not math.isfinite(v):
        return UNDEFINED
    if digits is None:
        return repr(float(v))
    return f"{v:.{digits}f}"


def report_csv_header() -> list[str]:
    return ["model", *[label for label, _ in COLUMNS]]


def report_row(model: str, report: MetricsReport, digits: int | None = None) -> list[str]:
    return [model, *[fmt_value(report.metric(attr), digits) for _, attr in COLUMNS]]


def reports_to_csv(rows: Sequence[tuple[str, MetricsReport]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(report_csv_header())
    for model, rep in rows:
        w.writerow(report_row(model, rep))
    return buf.getvalue()


def format_table(rows: Sequence[tuple[str, MetricsReport]], digits: int = 4) -> str:
    """Fixed-width summary table in export column order."""
    header = report_csv_header()
    body = [report_row(m, r, digits) for m, r in rows]
    widths = [max(len(x) for x in col) for col in zip(header, *body)]
    lines = ["  ".join(h.rjust(w) if i else h.ljust(w) for i, (h, w) in enumerate(zip(header, widths)))]
    for row in body:
        lines.append("  ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(row, widths))))
    return "\n".join(lines) + "\n"
