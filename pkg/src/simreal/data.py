"""Price ingestion, return matrices and train/gap/test splitting.

Dates are carried as ``numpy.datetime64[D]`` arrays throughout. All containers
are frozen dataclasses whose arrays are marked read-only, so they can be
shared freely between environments and threads.
"""

from __future__ import annotations

import csv
import datetime as dt
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    AlignmentError,
    DegenerateSeries,
    EmptyInput,
    EmptySegment,
    OverlapError,
    ParseError,
    SchemaError,
)

logger = logging.getLogger(__name__)

OHLCV_HEADER = ("date", "ticker", "open", "high", "low", "close", "adj_close", "volume")
REQUIRED_COLUMNS = ("date", "ticker", "adj_close")
RETURN_KINDS = ("simple", "log")

DateLike = "str | dt.date | np.datetime64"


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def to_day(value) -> np.datetime64:
    """Coerce an ISO string, ``date`` or ``datetime64`` to day resolution."""
    if isinstance(value, np.datetime64):
        return value.astype("datetime64[D]")
    if isinstance(value, dt.date):
        return np.datetime64(value.isoformat(), "D")
    return np.datetime64(str(value), "D")


@dataclass(frozen=True)
class PriceSeries:
    ticker: str
    dates: np.ndarray
    closes: np.ndarray

    def __post_init__(self):
        dates = np.asarray(self.dates, dtype="datetime64[D]")
        closes = np.asarray(self.closes, dtype=float)
        if dates.shape != closes.shape or dates.ndim != 1:
            raise ValueError(f"{self.ticker}: dates and closes must be equal-length 1-D arrays")
        if dates.size > 1 and not np.all(dates[1:] > dates[:-1]):
            raise ValueError(f"{self.ticker}: dates must be strictly increasing")
        if not np.all(np.isfinite(closes)) or np.any(closes <= 0):
            raise ValueError(f"{self.ticker}: closes must be finite and positive")
        object.__setattr__(self, "dates", _frozen(dates))
        object.__setattr__(self, "closes", _frozen(closes))

    def __len__(self) -> int:
        return int(self.dates.size)


@dataclass(frozen=True)
class ReturnMatrix:
    dates: np.ndarray
    tickers: tuple[str, ...]
    values: np.ndarray
    kind: str = "simple"

    def __post_init__(self):
        dates = np.asarray(self.dates, dtype="datetime64[D]")
        values = np.asarray(self.values, dtype=float)
        tickers = tuple(self.tickers)
        if values.ndim != 2:
            raise ValueError("values must be a T x n matrix")
        if values.shape != (dates.size, len(tickers)):
            raise ValueError(
                f"values shape {values.shape} does not match "
                f"{dates.size} dates x {len(tickers)} tickers"
            )
        if dates.size > 1 and not np.all(dates[1:] > dates[:-1]):
            raise ValueError("dates must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise ValueError("return matrix contains non-finite entries")
        if self.kind not in RETURN_KINDS:
            raise ValueError(f"unknown return kind {self.kind!r}")
        object.__setattr__(self, "dates", _frozen(dates))
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "tickers", tickers)

    @property
    def n_periods(self) -> int:
        return int(self.values.shape[0])

    @property
    def n_assets(self) -> int:
        return int(self.values.shape[1])

    def __len__(self) -> int:
        return self.n_periods

    def rows(self, mask_or_slice) -> "ReturnMatrix":
        return ReturnMatrix(self.dates[mask_or_slice], self.tickers,
                            self.values[mask_or_slice], self.kind)

    def with_values(self, values: np.ndarray) -> "ReturnMatrix":
        return ReturnMatrix(self.dates, self.tickers, values, self.kind)

    def simple(self) -> np.ndarray:
        """Values as simple returns regardless of ``kind``."""
        if self.kind == "log":
            return np.expm1(self.values)
        return np.array(self.values)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ReturnMatrix):
            return NotImplemented
        return (self.kind == other.kind and self.tickers == other.tickers
                and np.array_equal(self.dates, other.dates)
                and np.array_equal(self.values, other.values))

    __hash__ = None


@dataclass(frozen=True)
class DataSplit:
    train: ReturnMatrix
    gap: ReturnMatrix
    test: ReturnMatrix
    boundaries: tuple

    def __post_init__(self):
        if not (self.train.tickers == self.gap.tickers == self.test.tickers):
            raise ValueError("segments must share the same tickers")
        if not (self.train.dates[-1] < self.gap.dates[0]
                and self.gap.dates[-1] < self.test.dates[0]):
            raise OverlapError("segments are not in strict temporal order")


@dataclass(frozen=True)
class ValidationReport:
    policy: str
    ok: bool
    missing: dict = field(default_factory=dict)
    common_dates: np.ndarray = field(default_factory=lambda: np.array([], dtype="datetime64[D]"))

    def failures(self) -> list[tuple[str, np.datetime64]]:
        return [(t, d) for t, ds in self.missing.items() for d in ds]


# --- loading ----------------------------------------------------------------

def load_ohlcv(path, schema: Mapping[str, str] | None = None) -> list[PriceSeries]:
    """Read a long-format OHLCV CSV into one ``PriceSeries`` per ticker.

    ``schema`` maps canonical column names (``date``, ``ticker``,
    ``adj_close``) to the names used in the file header.
    """
    schema = dict(schema or {})
    colname = {k: schema.get(k, k) for k in REQUIRED_COLUMNS}
    path = Path(path)
    rows: dict[str, list[tuple[np.datetime64, float]]] = {}
    seen: dict[tuple[str, np.datetime64], int] = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyInput(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        missing = [c for c in colname.values() if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {missing}")
        idx = {k: header.index(v) for k, v in colname.items()}
        for record in reader:
            line = reader.line_num
            if not record or all(not c.strip() for c in record):
                continue
            if len(record) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(record)}", line)
            ticker = record[idx["ticker"]].strip()
            if not ticker:
                raise ParseError("empty ticker", line)
            try:
                day = np.datetime64(dt.date.fromisoformat(record[idx["date"]].strip()), "D")
            except ValueError:
                raise ParseError(f"bad date {record[idx['date']]!r}", line) from None
            try:
                price = float(record[idx["adj_close"]])
            except ValueError:
                raise ParseError(f"bad adj_close {record[idx['adj_close']]!r}", line) from None
            if not np.isfinite(price) or price <= 0:
                raise ParseError(f"adj_close must be positive, got {price}", line)
            key = (ticker, day)
            if key in seen:
                raise ParseError(
                    f"duplicate row for {ticker} on {day} (first seen at line {seen[key]})", line)
            seen[key] = line
            rows.setdefault(ticker, []).append((day, price))
    if not rows:
        raise EmptyInput(f"{path}: no data rows")
    out = []
    for ticker in sorted(rows):
        recs = sorted(rows[ticker], key=lambda r: r[0])
        out.append(PriceSeries(ticker, np.array([r[0] for r in recs]),
                               np.array([r[1] for r in recs])))
    return out


def write_ohlcv(series: Sequence[PriceSeries], path) -> None:
    """Write series in the canonical long CSV layout (OHLC filled from adj_close)."""
    records = []
    for s in series:
        for d, p in zip(s.dates, s.closes):
            records.append((str(d), s.ticker, p))
    records.sort()
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(OHLCV_HEADER)
        for d, t, p in records:
            px = repr(float(p))
            w.writerow((d, t, px, px, px, px, px, 0))


# --- alignment and returns --------------------------------------------------

def validate_alignment(series: Sequence[PriceSeries], policy: str = "intersect") -> ValidationReport:
    if policy not in ("strict", "intersect"):
        raise ValueError(f"unknown alignment policy {policy!r}")
    if not series:
        raise EmptyInput("no series to align")
    union = np.unique(np.concatenate([s.dates for s in series]))
    common = series[0].dates
    for s in series[1:]:
        common = np.intersect1d(common, s.dates)
    missing = {s.ticker: [d for d in np.setdiff1d(union, s.dates)] for s in series}
    gaps = any(missing.values())
    ok = not gaps if policy == "strict" else common.size > 0
    if gaps:
        for ticker, days in missing.items():
            if days:
                logger.debug("%s missing %d date(s), first %s", ticker, len(days), days[0])
    return ValidationReport(policy, ok, missing, common)


def compute_returns(series: Sequence[PriceSeries], kind: str = "simple") -> ReturnMatrix:
    """Per-period returns on the intersected calendar of ``series``."""
    if kind not in RETURN_KINDS:
        raise ValueError(f"unknown return kind {kind!r}")
    if not series:
        raise EmptyInput("no series given")
    for s in series:
        if len(s) < 2:
            raise DegenerateSeries(f"{s.ticker}: need at least 2 prices, got {len(s)}")
    report = validate_alignment(series, "intersect")
    common = report.common_dates
    if common.size == 0:
        raise AlignmentError("series share no common dates")
    if common.size < 2:
        raise DegenerateSeries("common calendar has fewer than 2 dates")
    prices = np.column_stack([s.closes[np.searchsorted(s.dates, common)] for s in series])
    ratio = prices[1:] / prices[:-1]
    values = np.log(ratio) if kind == "log" else ratio - 1.0
    return ReturnMatrix(common[1:], tuple(s.ticker for s in series), values, kind)


# --- splitting --------------------------------------------------------------

def _range(r) -> tuple[np.datetime64, np.datetime64]:
    start, end = r
    start, end = to_day(start), to_day(end)
    if end < start:
        raise OverlapError(f"range end {end} precedes start {start}")
    return start, end


def split_periods(returns: ReturnMatrix, train_range, gap_range, test_range) -> DataSplit:
    """Partition rows into train, gap and test by inclusive date ranges."""
    ranges = [_range(r) for r in (train_range, gap_range, test_range)]
    names = ("train", "gap", "test")
    for (a, ra), (b, rb) in zip(zip(names, ranges), zip(names[1:], ranges[1:])):
        if not ra[1] < rb[0]:
            raise OverlapError(f"{a} range {ra[0]}..{ra[1]} overlaps or follows "
                               f"{b} range {rb[0]}..{rb[1]}")
    segs = []
    for name, (start, end) in zip(names, ranges):
        mask = (returns.dates >= start) & (returns.dates <= end)
        if not mask.any():
            raise EmptySegment(f"{name} range {start}..{end} captures no rows")
        segs.append(returns.rows(mask))
    return DataSplit(*segs, boundaries=tuple(ranges))


# --- synthetic data ---------------------------------------------------------

def business_days(start, n: int) -> np.ndarray:
    first = np.busday_offset(to_day(start), 0, roll="forward")
    return np.busday_offset(first, np.arange(n), roll="forward").astype("datetime64[D]")


def synthetic_prices(
    n_assets: int = 4,
    n_periods: int = 1500,
    *,
    start="2017-01-02",
    drift: float | Iterable[float] = 0.0003,
    vol: float | Iterable[float] = 0.01,
    corr: float = 0.2,
    regime_drift: float = 0.0,
    regime_switch_prob: float = 0.0,
    initial_price: float = 100.0,
    seed: int = 0,
    tickers: Sequence[str] | None = None,
) -> list[PriceSeries]:
    """Seeded geometric random walk, optionally with persistent leadership regimes.

    With ``regime_drift > 0`` a hidden Markov chain picks one "leader" asset
    whose log drift is raised by ``regime_drift`` while the others are lowered
    by ``regime_drift / (n_assets - 1)``; the leader changes with probability
    ``regime_switch_prob`` each period.
    """
    if not -1.0 / max(n_assets - 1, 1) < corr < 1.0 and n_assets > 1:
        raise ValueError("corr outside the positive-definite range")
    rng = np.random.default_rng(seed)
    mu = np.broadcast_to(np.asarray(drift, dtype=float), (n_assets,))
    sig = np.broadcast_to(np.asarray(vol, dtype=float), (n_assets,))
    c = np.full((n_assets, n_assets), corr)
    np.fill_diagonal(c, 1.0)
    chol = np.linalg.cholesky(c)
    z = rng.standard_normal((n_periods - 1, n_assets)) @ chol.T
    log_r = mu - 0.5 * sig**2 + sig * z
    if regime_drift:
        leader = np.empty(n_periods - 1, dtype=int)
        cur = int(rng.integers(n_assets))
        switches = rng.random(n_periods - 1) < regime_switch_prob
        picks = rng.integers(n_assets - 1, size=n_periods - 1)
        for t in range(n_periods - 1):
            if switches[t]:
                cur = (cur + 1 + int(picks[t])) % n_assets
            leader[t] = cur
        bump = np.full((n_periods - 1, n_assets), -regime_drift / max(n_assets - 1, 1))
        bump[np.arange(n_periods - 1), leader] = regime_drift
        log_r = log_r + bump
    paths = initial_price * np.exp(np.vstack([np.zeros(n_assets), np.cumsum(log_r, axis=0)]))
    dates = business_days(start, n_periods)
    names = list(tickers) if tickers else [f"SYN{i}" for i in range(n_assets)]
    return [PriceSeries(names[i], dates, paths[:, i]) for i in range(n_assets)]
