"""Candle and auction-bid ingestion, per-round returns, and the regression dataset.

File formats (UTF-8, LF, header required):

    candles: open_time_ms,open,high,low,close,volume
    bids:    round_id,bidder,bid_wei,round_start_ms
    dataset: round_id,bidder,bid_scaled,censored,x1,x2,p_start

Bids are parsed as exact wei integers and scaled once, at dataset build:
one bid unit is 1e15 wei (0.001 ETH), so the reserve sits at 1.0.  The two
volatility features are scaled for numerical stability:

    x1 = (E[IV] / sqrt(p_start)) * 1e9
    x2 = Var(IV) * 1e12
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import CoverageError, ParseError, ValidationError
from .vol_estimators import IvMoments, round_moments

log = logging.getLogger(__name__)

BAR_MS = 1000
ROUND_MS = 60_000
DEADLINE_OFFSET_MS = 15_000  # bidding closes 15 s before the round starts
WEI_PER_UNIT = 10**15        # one bid unit = 1e15 wei = 0.001 ETH
RESERVE_WEI = 10**15
X1_SCALE = 1e9
X2_SCALE = 1e12

# Largest wei amount whose unit-scaled float round-trips exactly.
MAX_EXACT_WEI = 2**53

CANDLE_COLUMNS = ["open_time_ms", "open", "high", "low", "close", "volume"]
BID_COLUMNS = ["round_id", "bidder", "bid_wei", "round_start_ms"]
DATASET_COLUMNS = ["round_id", "bidder", "bid_scaled", "censored", "x1", "x2", "p_start"]


@dataclass
class CandleSeries:
    """Fixed-interval OHLCV bars, sorted and deduplicated, with gaps flagged."""

    open_time: np.ndarray  # int64 epoch ms, strictly increasing
    open: np.ndarray
    high: np.ndarray
    low: np.ndarray
    close: np.ndarray
    volume: np.ndarray
    bar_ms: int
    gaps: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    duplicate_count: int = 0

    def __len__(self) -> int:
        return int(self.open_time.size)


@dataclass(frozen=True)
class BidRecord:
    round_id: int
    bidder: str
    bid_wei: int
    round_start: int  # epoch ms
    deadline: int     # epoch ms, round_start - 15 s; metadata only
    censored: bool    # bid_wei <= reserve


@dataclass(frozen=True)
class ReturnWindow:
    round_id: int
    returns: np.ndarray  # T log returns
    p_start: float       # open of the round's first bar
    fill_count: int      # missing bars forward-filled inside the window


def load_candles(path, bar_ms: int = BAR_MS) -> CandleSeries:
    """Read a candle CSV into a sorted, deduplicated series with a gap report."""
    path = Path(path)
    df = pd.read_csv(path, dtype=str)
    if list(df.columns) != CANDLE_COLUMNS:
        raise ParseError(
            f"{path}: expected header {','.join(CANDLE_COLUMNS)}, got {','.join(df.columns)}"
        )
    numeric = {}
    for col in CANDLE_COLUMNS:
        vals = pd.to_numeric(df[col], errors="coerce")
        bad = np.flatnonzero(vals.isna().to_numpy())
        if bad.size:
            raise ParseError(f"{path}: line {bad[0] + 2}: cannot parse column {col!r}")
        numeric[col] = vals.to_numpy(dtype=float)

    for col in ("open", "high", "low", "close"):
        bad = np.flatnonzero(numeric[col] <= 0.0)
        if bad.size:
            raise ValidationError(f"{path}: line {bad[0] + 2}: non-positive {col} price")

    times = numeric["open_time_ms"]
    if np.any(times != np.floor(times)):
        raise ValidationError(f"{path}: open_time_ms must be integral")
    times = times.astype(np.int64)

    order = np.argsort(times, kind="stable")
    times = times[order]
    cols = {c: numeric[c][order] for c in CANDLE_COLUMNS[1:]}

    keep = np.ones(times.size, dtype=bool)
    keep[1:] = times[1:] != times[:-1]  # first occurrence wins
    dup_count = int(times.size - keep.sum())
    if dup_count:
        log.warning("%s: dropped %d duplicate bar(s)", path, dup_count)
        times = times[keep]
        cols = {c: v[keep] for c, v in cols.items()}

    if np.any((times - times[0]) % bar_ms != 0):
        bad = int(np.flatnonzero((times - times[0]) % bar_ms != 0)[0])
        raise ValidationError(
            f"{path}: bar at {times[bad]} not aligned to {bar_ms} ms interval"
        )
    expected = np.arange(times[0], times[-1] + bar_ms, bar_ms, dtype=np.int64)
    gaps = np.setdiff1d(expected, times, assume_unique=True)
    if gaps.size:
        log.warning("%s: %d missing bar(s)", path, gaps.size)

    return CandleSeries(
        open_time=times,
        open=cols["open"],
        high=cols["high"],
        low=cols["low"],
        close=cols["close"],
        volume=cols["volume"],
        bar_ms=bar_ms,
        gaps=gaps,
        duplicate_count=dup_count,
    )


def load_bids(path) -> list[BidRecord]:
    """Read a bid CSV; exact wei parsing, duplicate (round, bidder) keeps the max bid."""
    path = Path(path)
    best: dict[tuple[int, str], tuple[int, int]] = {}  # (round, bidder) -> (bid_wei, start)
    dup_count = 0
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if [h.strip() for h in header] != BID_COLUMNS:
            raise ParseError(
                f"{path}: expected header {','.join(BID_COLUMNS)}, got {','.join(header)}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise ParseError(f"{path}: line {lineno}: expected 4 fields, got {len(row)}")
            try:
                round_id = int(row[0])
                bid_wei = int(row[2])
                start = int(row[3])
            except ValueError as exc:
                raise ParseError(f"{path}: line {lineno}: {exc}") from None
            if bid_wei < 0:
                raise ValidationError(f"{path}: line {lineno}: negative bid_wei")
            bidder = row[1].strip()
            key = (round_id, bidder)
            if key in best:
                dup_count += 1
                if bid_wei <= best[key][0]:
                    continue
            best[key] = (bid_wei, start)
    if dup_count:
        log.warning("%s: %d duplicate (round, bidder) bid(s), kept max", path, dup_count)

    records = [
        BidRecord(
            round_id=rid,
            bidder=bidder,
            bid_wei=wei,
            round_start=start,
            deadline=start - DEADLINE_OFFSET_MS,
            censored=wei <= RESERVE_WEI,
        )
        for (rid, bidder), (wei, start) in best.items()
    ]
    records.sort(key=lambda rec: (rec.round_id, rec.bidder))
    return records


def round_returns(
    candles: CandleSeries,
    round_start: int,
    T: int = 60,
    *,
    round_id: int = -1,
    max_fills: int = 5,
) -> ReturnWindow:
    """Log returns over the T bars of one round, forward-filling small gaps.

    A missing bar carries the previous close forward, contributing one zero
    return; more than ``max_fills`` missing bars (or a missing first bar)
    is a coverage failure.
    """
    bar = candles.bar_ms
    expected = round_start + np.arange(T + 1, dtype=np.int64) * bar
    idx = np.searchsorted(candles.open_time, expected)
    ok = idx < candles.open_time.size
    present = np.zeros(T + 1, dtype=bool)
    present[ok] = candles.open_time[idx[ok]] == expected[ok]

    label = f"round {round_id}" if round_id >= 0 else f"round at {round_start}"
    if not present[0]:
        raise CoverageError(f"{label}: no bar at round start {round_start}")
    fill_count = int(T + 1 - present.sum())
    if fill_count > max_fills:
        raise CoverageError(f"{label}: {fill_count} missing bars exceeds limit {max_fills}")

    closes = np.empty(T + 1, dtype=float)
    closes[present] = candles.close[idx[present]]
    for t in np.flatnonzero(~present):
        closes[t] = closes[t - 1]

    return ReturnWindow(
        round_id=round_id,
        returns=np.diff(np.log(closes)),
        p_start=float(candles.open[idx[0]]),
        fill_count=fill_count,
    )


def scale_bid_wei(bid_wei: int) -> float:
    """Convert wei to bid units (1e15 wei each).

    Amounts above 2^53 wei are rejected unless exactly representable in
    float64 (the documented precision bound).  Below the bound the scaled
    value reproduces the integer exactly whenever float64 permits; otherwise
    it is the correctly rounded quotient, at most 1 wei off on the return
    trip (a double cannot carry every 16-digit integer through a decimal
    rescale).
    """
    if bid_wei > MAX_EXACT_WEI:
        try:
            exact = float(bid_wei) == bid_wei
        except OverflowError:
            exact = False
        if not exact:
            raise ValidationError(
                f"bid {bid_wei} wei exceeds the 2^53 exact-precision bound"
            )
    q = bid_wei / WEI_PER_UNIT
    # prefer a quotient (within 1 ulp) whose product reproduces the integer exactly
    for cand in (q, math.nextafter(q, math.inf), math.nextafter(q, -math.inf)):
        if cand * WEI_PER_UNIT == bid_wei:
            return cand
    return q


@dataclass
class RoundDataset:
    """One row per (round, bidder): scaled bid, censoring flag, and features."""

    round_id: np.ndarray    # int64
    bidder: np.ndarray      # object (str)
    bid_scaled: np.ndarray  # float, units of 1e15 wei
    censored: np.ndarray    # bool
    x1: np.ndarray          # (E[IV]/sqrt(P)) * 1e9
    x2: np.ndarray          # Var(IV) * 1e12
    p_start: np.ndarray     # USD
    round_start_ms: np.ndarray | None = None  # carried for calendar splits
    dropped_rows: int = 0       # rows dropped for a missing lagged round
    floored_rounds: int = 0     # rounds whose Var(IV) was floored at zero
    inexact_scaled: int = 0     # bids whose scaled value is 1 wei off on return

    def __len__(self) -> int:
        return int(self.round_id.size)

    @property
    def n_censored(self) -> int:
        return int(self.censored.sum())

    def subset(self, mask) -> "RoundDataset":
        mask = np.asarray(mask)
        return RoundDataset(
            round_id=self.round_id[mask],
            bidder=self.bidder[mask],
            bid_scaled=self.bid_scaled[mask],
            censored=self.censored[mask],
            x1=self.x1[mask],
            x2=self.x2[mask],
            p_start=self.p_start[mask],
            round_start_ms=None if self.round_start_ms is None else self.round_start_ms[mask],
        )

    def filter_bidder(self, bidder: str) -> "RoundDataset":
        return self.subset(self.bidder == bidder)

    def bidders(self) -> list[str]:
        return sorted(set(self.bidder.tolist()))

    def to_csv(self, path) -> None:
        """Deterministic serialization: repr floats, true/false booleans, LF."""
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(DATASET_COLUMNS) + "\n")
            for i in range(len(self)):
                fh.write(
                    f"{self.round_id[i]},{self.bidder[i]},{float(self.bid_scaled[i])!r},"
                    f"{'true' if self.censored[i] else 'false'},"
                    f"{float(self.x1[i])!r},{float(self.x2[i])!r},{float(self.p_start[i])!r}\n"
                )

    @classmethod
    def from_csv(cls, path) -> "RoundDataset":
        path = Path(path)
        rows: list[tuple] = []
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != DATASET_COLUMNS:
                raise ParseError(f"{path}: unexpected dataset header")
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                try:
                    rows.append(
                        (
                            int(row[0]),
                            row[1],
                            float(row[2]),
                            row[3] == "true",
                            float(row[4]),
                            float(row[5]),
                            float(row[6]),
                        )
                    )
                except (ValueError, IndexError) as exc:
                    raise ParseError(f"{path}: line {lineno}: {exc}") from None
        return cls.from_rows(rows)

    @classmethod
    def from_rows(cls, rows) -> "RoundDataset":
        if rows:
            rid, bidder, bid, cens, x1, x2, p0 = zip(*rows)
        else:
            rid = bidder = bid = cens = x1 = x2 = p0 = ()
        return cls(
            round_id=np.asarray(rid, dtype=np.int64),
            bidder=np.asarray(bidder, dtype=object),
            bid_scaled=np.asarray(bid, dtype=float),
            censored=np.asarray(cens, dtype=bool),
            x1=np.asarray(x1, dtype=float),
            x2=np.asarray(x2, dtype=float),
            p_start=np.asarray(p0, dtype=float),
        )


def build_dataset(
    bids: list[BidRecord],
    candles: CandleSeries,
    T: int = 60,
    L: int = 5,
    lagged: bool = False,
    *,
    max_fills: int = 5,
    x1_scale: float = X1_SCALE,
    x2_scale: float = X2_SCALE,
) -> RoundDataset:
    """Join bids with round-level volatility features.

    Features come from the bid's own round, or from the previous round when
    ``lagged`` (the round one minute earlier); rows whose previous round is
    not covered by the candles are dropped and counted.
    """
    if not bids:
        raise ValidationError("no bid records")
    starts: dict[int, int] = {}
    for rec in bids:
        prev = starts.setdefault(rec.round_id, rec.round_start)
        if prev != rec.round_start:
            raise ValidationError(
                f"round {rec.round_id}: inconsistent round_start ({prev} vs {rec.round_start})"
            )

    windows: dict[int, ReturnWindow] = {}
    moments: dict[int, IvMoments] = {}
    for rid, start in starts.items():
        win = round_returns(candles, start, T, round_id=rid, max_fills=max_fills)
        windows[rid] = win
        moments[rid] = round_moments(win, L)

    lagged_moments: dict[int, IvMoments | None] = {}
    if lagged:
        for rid, start in starts.items():
            try:
                prev_win = round_returns(
                    candles, start - ROUND_MS, T, round_id=rid - 1, max_fills=max_fills
                )
            except CoverageError:
                lagged_moments[rid] = None
                continue
            lagged_moments[rid] = round_moments(prev_win, L)

    rows = []
    dropped = 0
    inexact = 0
    for rec in bids:
        mom = lagged_moments[rec.round_id] if lagged else moments[rec.round_id]
        if mom is None:
            dropped += 1
            continue
        p0 = windows[rec.round_id].p_start
        scaled = scale_bid_wei(rec.bid_wei)
        if scaled * WEI_PER_UNIT != rec.bid_wei:
            inexact += 1
        rows.append(
            (
                rec.round_id,
                rec.bidder,
                scaled,
                rec.censored,
                mom.e_iv / np.sqrt(p0) * x1_scale,
                mom.var_iv * x2_scale,
                p0,
                rec.round_start,
            )
        )
    if dropped:
        log.warning("dropped %d row(s) with no previous-round coverage", dropped)
    if inexact:
        log.warning("%d bid(s) scaled with sub-wei precision slack", inexact)

    used = {r[0] for r in rows}
    pool = lagged_moments if lagged else moments
    floored = sum(1 for rid in used if pool[rid] is not None and pool[rid].var_floored)

    ds = RoundDataset.from_rows([r[:7] for r in rows])
    ds.round_start_ms = np.asarray([r[7] for r in rows], dtype=np.int64)
    ds.dropped_rows = dropped
    ds.floored_rounds = floored
    ds.inexact_scaled = inexact
    return ds
