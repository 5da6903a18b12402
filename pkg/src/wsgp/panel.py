"""Market panel: aligned date x stock matrices, flags, CSV I/O and forward returns.

Missing cells are NaN throughout; NaN propagates through all arithmetic.
"""

from __future__ import annotations

import csv
import glob
import hashlib
import math
import os
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

PRICE_FIELDS = ("open", "high", "low", "close", "vwap", "volume", "turnover")
DERIVED_FIELDS = ("returns",)
FLAG_NAMES = ("limit_up", "limit_down", "suspended", "st")
CSV_HEADER = ("date", "stock_id") + PRICE_FIELDS + FLAG_NAMES
_POSITIVE = ("close", "vwap", "volume")


class PanelError(ValueError):
    pass


class MalformedRow(PanelError):
    def __init__(self, message: str, path: str, line: int):
        self.path = path
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


class DuplicateCell(PanelError):
    def __init__(self, date: str, stock: str, path: str, line: int):
        self.date, self.stock = date, stock
        self.path, self.line = path, line
        super().__init__(f"{path}:{line}: duplicate row for ({date}, {stock})")


class EmptyInput(PanelError):
    pass


class MissingField(PanelError):
    pass


def _derive_returns(close: np.ndarray) -> np.ndarray:
    out = np.full_like(close, np.nan)
    with np.errstate(divide="ignore", invalid="ignore"):
        out[1:] = close[1:] / close[:-1] - 1.0
    return out


@dataclass(frozen=True, eq=False)
class MarketPanel:
    """Immutable date x stock panel.

    ``fields`` maps field name to a float ``(T, N)`` array with NaN for
    missing cells; ``flags`` maps each of :data:`FLAG_NAMES` to a boolean
    ``(T, N)`` array. ``returns`` is derived from ``close`` when absent.
    """

    dates: np.ndarray
    stocks: tuple[str, ...]
    fields: Mapping[str, np.ndarray]
    flags: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        dates = np.asarray(self.dates, dtype="datetime64[D]")
        if dates.ndim != 1 or len(dates) == 0:
            raise PanelError("dates must be a non-empty 1-d sequence")
        if len(dates) > 1 and not np.all(dates[1:] > dates[:-1]):
            raise PanelError("dates must be strictly increasing")
        stocks = tuple(str(s) for s in self.stocks)
        if len(set(stocks)) != len(stocks):
            raise PanelError("stock ids must be unique")
        shape = (len(dates), len(stocks))
        fields = {}
        for name, arr in self.fields.items():
            arr = np.array(arr, dtype=float)
            if arr.shape != shape:
                raise PanelError(f"field {name!r} has shape {arr.shape}, expected {shape}")
            if np.isinf(arr).any():
                raise PanelError(f"field {name!r} contains infinite values")
            if name in _POSITIVE and np.any(arr[np.isfinite(arr)] <= 0):
                raise PanelError(f"field {name!r} must be positive where present")
            arr.setflags(write=False)
            fields[name] = arr
        if "close" in fields and "returns" not in fields:
            ret = _derive_returns(fields["close"])
            ret.setflags(write=False)
            fields["returns"] = ret
        flags = {}
        for name in FLAG_NAMES:
            arr = np.array(self.flags.get(name, np.zeros(shape, dtype=bool)), dtype=bool)
            if arr.shape != shape:
                raise PanelError(f"flag {name!r} has shape {arr.shape}, expected {shape}")
            arr.setflags(write=False)
            flags[name] = arr
        extra = set(self.flags) - set(FLAG_NAMES)
        if extra:
            raise PanelError(f"unknown flags: {sorted(extra)}")
        dates.setflags(write=False)
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "stocks", stocks)
        object.__setattr__(self, "fields", fields)
        object.__setattr__(self, "flags", flags)

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.dates), len(self.stocks)

    def field(self, name: str) -> np.ndarray:
        try:
            return self.fields[name]
        except KeyError:
            raise MissingField(f"panel has no field {name!r}") from None

    def universe(self) -> np.ndarray:
        """Cells eligible for daily cross-sections: close present and not suspended."""
        return self._universe

    @cached_property
    def _universe(self) -> np.ndarray:
        u = np.isfinite(self.field("close")) & ~self.flags["suspended"]
        u.setflags(write=False)
        return u

    @cached_property
    def panel_id(self) -> str:
        h = hashlib.sha1()
        h.update(self.dates.tobytes())
        h.update("\x00".join(self.stocks).encode())
        for name in sorted(self.fields):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.fields[name]).tobytes())
        for name in FLAG_NAMES:
            h.update(self.flags[name].tobytes())
        return h.hexdigest()[:16]

    def date_index(self, date) -> int:
        return index_of_date(self.dates, date)

    def slice_dates(self, start: int, stop: int) -> "MarketPanel":
        """Rows ``start:stop`` as a new panel (``returns`` is sliced, not re-derived)."""
        return MarketPanel(
            self.dates[start:stop],
            self.stocks,
            {k: v[start:stop] for k, v in self.fields.items()},
            {k: v[start:stop] for k, v in self.flags.items()},
        )

    def replace(self, fields: Mapping[str, np.ndarray] | None = None,
                flags: Mapping[str, np.ndarray] | None = None) -> "MarketPanel":
        new_fields = dict(self.fields)
        if fields:
            new_fields.update(fields)
            if "close" in fields and "returns" not in fields:
                new_fields.pop("returns", None)
        new_flags = dict(self.flags)
        new_flags.update(flags or {})
        return MarketPanel(self.dates, self.stocks, new_fields, new_flags)


def index_of_date(dates: np.ndarray, date) -> int:
    d = np.datetime64(date, "D")
    i = int(np.searchsorted(dates, d))
    if i >= len(dates) or dates[i] != d:
        raise KeyError(f"date {d} not in panel")
    return i


def resolve_range(dates: np.ndarray, date_range) -> slice:
    """Turn an inclusive ``(start, end)`` date pair into a row slice.

    ``None`` (or ``None`` endpoints) mean the panel edges. Endpoints need not
    be trading days; the slice covers the dates falling inside the range.
    """
    if date_range is None:
        return slice(0, len(dates))
    start, end = date_range
    lo = 0 if start is None else int(np.searchsorted(dates, np.datetime64(start, "D"), side="left"))
    hi = len(dates) if end is None else int(np.searchsorted(dates, np.datetime64(end, "D"), side="right"))
    if hi <= lo:
        raise PanelError(f"date range {date_range} selects no panel dates")
    return slice(lo, hi)


@dataclass(frozen=True, eq=False)
class ForwardReturns:
    """``values[t, i] = vwap[t+h+1, i] / vwap[t+1, i] - 1``; last ``h+1`` rows missing."""

    horizon_days: int
    values: np.ndarray
    dates: np.ndarray
    stocks: tuple[str, ...]


def forward_returns(panel: MarketPanel, horizon_days: int = 5) -> ForwardReturns:
    if horizon_days < 1:
        raise ValueError("horizon_days must be >= 1")
    vwap = panel.field("vwap")
    out = np.full_like(vwap, np.nan)
    h = horizon_days
    if len(vwap) > h + 1:
        out[: -(h + 1)] = vwap[h + 1:] / vwap[1:-h] - 1.0
    out.setflags(write=False)
    return ForwardReturns(h, out, panel.dates, panel.stocks)


def _expand_paths(path_spec: str | os.PathLike | Iterable) -> list[str]:
    if isinstance(path_spec, (str, os.PathLike)):
        specs = [path_spec]
    else:
        specs = list(path_spec)
    paths: list[str] = []
    for spec in specs:
        spec = str(spec)
        if os.path.isdir(spec):
            paths.extend(sorted(glob.glob(os.path.join(spec, "*.csv"))))
        elif any(c in spec for c in "*?["):
            paths.extend(sorted(glob.glob(spec)))
        else:
            paths.append(spec)
    return paths


def _parse_float(text: str, col: str, path: str, line: int) -> float:
    if text == "":
        return math.nan
    try:
        v = float(text)
    except ValueError:
        raise MalformedRow(f"column {col!r}: not a number: {text!r}", path, line) from None
    if not math.isfinite(v):
        raise MalformedRow(f"column {col!r}: non-finite value", path, line)
    if col in _POSITIVE and v <= 0:
        raise MalformedRow(f"column {col!r} must be positive, got {v}", path, line)
    return v


def _parse_flag(text: str, col: str, path: str, line: int) -> bool:
    if text in ("", "0"):
        return False
    if text == "1":
        return True
    raise MalformedRow(f"flag column {col!r} must be 0 or 1, got {text!r}", path, line)


def load_csv(path_spec) -> MarketPanel:
    """Load one or more panel CSV files (a path, glob, directory or list).

    The header must be ``date,stock_id,open,high,low,close,vwap,volume,
    turnover,limit_up,limit_down,suspended,st``. The panel spans the union
    of dates and stocks; cells with no row are missing.
    """
    paths = _expand_paths(path_spec)
    records: dict[tuple[np.datetime64, str], tuple[list[float], list[bool]]] = {}
    for path in paths:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                continue
            if tuple(h.strip() for h in header) != CSV_HEADER:
                raise MalformedRow(f"bad header {header!r}", path, 1)
            for row in reader:
                line = reader.line_num
                if not row:
                    continue
                if len(row) != len(CSV_HEADER):
                    raise MalformedRow(f"expected {len(CSV_HEADER)} columns, got {len(row)}", path, line)
                try:
                    date = np.datetime64(row[0].strip(), "D")
                except ValueError:
                    raise MalformedRow(f"bad ISO date {row[0]!r}", path, line) from None
                stock = row[1].strip()
                if not stock:
                    raise MalformedRow("empty stock_id", path, line)
                key = (date, stock)
                if key in records:
                    raise DuplicateCell(str(date), stock, path, line)
                nums = [
                    _parse_float(row[2 + j].strip(), c, path, line) for j, c in enumerate(PRICE_FIELDS)
                ]
                off = 2 + len(PRICE_FIELDS)
                flags = [_parse_flag(row[off + j].strip(), c, path, line) for j, c in enumerate(FLAG_NAMES)]
                records[key] = (nums, flags)
    if not records:
        raise EmptyInput(f"no data rows in {paths}")
    dates = np.array(sorted({k[0] for k in records}), dtype="datetime64[D]")
    stocks = tuple(sorted({k[1] for k in records}))
    d_idx = {d: i for i, d in enumerate(dates)}
    s_idx = {s: j for j, s in enumerate(stocks)}
    shape = (len(dates), len(stocks))
    num = np.full((len(PRICE_FIELDS),) + shape, np.nan)
    flg = np.zeros((len(FLAG_NAMES),) + shape, dtype=bool)
    for (d, s), (nums, flags) in records.items():
        i, j = d_idx[d], s_idx[s]
        num[:, i, j] = nums
        flg[:, i, j] = flags
    return MarketPanel(
        dates,
        stocks,
        {name: num[k] for k, name in enumerate(PRICE_FIELDS)},
        {name: flg[k] for k, name in enumerate(FLAG_NAMES)},
    )


def _fmt(v: float) -> str:
    return "" if math.isnan(v) else repr(float(v))


def write_csv(panel: MarketPanel, path: str | os.PathLike) -> None:
    """Write every (date, stock) cell; floats use ``repr`` so reloading is exact."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        cols = [panel.fields.get(f) for f in PRICE_FIELDS]
        flags = [panel.flags[f] for f in FLAG_NAMES]
        for i, d in enumerate(panel.dates):
            ds = str(d)
            for j, s in enumerate(panel.stocks):
                w.writerow(
                    [ds, s]
                    + ["" if c is None else _fmt(c[i, j]) for c in cols]
                    + ["1" if f[i, j] else "0" for f in flags]
                )
