"""IC-family fitness metrics and inter-alpha correlation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from wsgp.evaluator import AlphaMatrix
from wsgp.panel import ForwardReturns, resolve_range

MIN_CROSS_SECTION = 20


class NoValidDates(ValueError):
    """Every date in range was skipped (too few pairs or zero variance)."""


def rowwise_pearson(a: np.ndarray, r: np.ndarray, min_cross_section: int = MIN_CROSS_SECTION) -> np.ndarray:
    """Per-row Pearson correlation over pairwise-complete cells.

    Rows with fewer than ``min_cross_section`` complete pairs, or where either
    side is constant, come back as NaN.
    """
    a = np.asarray(a, dtype=float)
    r = np.asarray(r, dtype=float)
    m = np.isfinite(a) & np.isfinite(r)
    n = m.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        a0 = np.where(m, a, 0.0)
        r0 = np.where(m, r, 0.0)
        ma = a0.sum(axis=1) / n
        mr = r0.sum(axis=1) / n
        da = np.where(m, a - ma[:, None], 0.0)
        dr = np.where(m, r - mr[:, None], 0.0)
        cov = (da * dr).sum(axis=1)
        va = (da * da).sum(axis=1)
        vr = (dr * dr).sum(axis=1)
        corr = cov / np.sqrt(va * vr)
    flat = (_masked_ptp(a, m) == 0) | (_masked_ptp(r, m) == 0)
    corr[(n < max(min_cross_section, 2)) | flat] = np.nan
    return corr


def _masked_ptp(x: np.ndarray, m: np.ndarray) -> np.ndarray:
    hi = np.where(m, x, -np.inf).max(axis=1)
    lo = np.where(m, x, np.inf).min(axis=1)
    return hi - lo


def _pairwise_ranks(a: np.ndarray, r: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    m = np.isfinite(a) & np.isfinite(r)
    if a.size == 0:
        return a, r
    ra = rankdata(np.where(m, a, np.nan), axis=1, nan_policy="omit")
    rr = rankdata(np.where(m, r, np.nan), axis=1, nan_policy="omit")
    return ra, rr


def rowwise_spearman(a: np.ndarray, r: np.ndarray, min_cross_section: int = MIN_CROSS_SECTION) -> np.ndarray:
    """Pearson correlation of average-tie ranks, same skip rules as :func:`rowwise_pearson`."""
    ra, rr = _pairwise_ranks(np.asarray(a, dtype=float), np.asarray(r, dtype=float))
    return rowwise_pearson(ra, rr, min_cross_section)


def _single(fn, a_row, r_row, min_cross_section):
    a_row = np.asarray(a_row, dtype=float)
    r_row = np.asarray(r_row, dtype=float)
    if a_row.shape != r_row.shape:
        raise ValueError("rows must have equal length")
    v = fn(a_row[None, :], r_row[None, :], min_cross_section)[0]
    return None if math.isnan(v) else float(v)


def daily_pearson(a_row, r_row, min_cross_section: int = MIN_CROSS_SECTION) -> float | None:
    return _single(rowwise_pearson, a_row, r_row, min_cross_section)


def daily_spearman(a_row, r_row, min_cross_section: int = MIN_CROSS_SECTION) -> float | None:
    return _single(rowwise_spearman, a_row, r_row, min_cross_section)


def _ratio(mean: float, series: np.ndarray) -> float | None:
    if len(series) < 2:
        return None
    sd = float(np.std(series, ddof=1))
    if sd == 0 or not math.isfinite(sd):
        return None
    return mean / sd


@dataclass(frozen=True, eq=False)
class FitnessReport:
    """IC, ICIR, RankIC and RankICIR with their daily series.

    All metrics and series are multiplied by ``sign`` so that ``ic >= 0``.
    ``icir``/``rank_icir`` are ``None`` when the daily series has fewer than
    two points or zero spread.
    """

    ic: float
    icir: float | None
    rank_ic: float
    rank_icir: float | None
    n_dates_used: int
    dates: np.ndarray
    daily_ic: np.ndarray
    daily_rank_ic: np.ndarray
    sign: int

    @property
    def fitness(self) -> float:
        return self.ic

    def metrics(self) -> dict:
        return {
            "ic": self.ic,
            "icir": self.icir,
            "rank_ic": self.rank_ic,
            "rank_icir": self.rank_icir,
            "n_dates_used": self.n_dates_used,
            "sign": self.sign,
        }

    def to_dict(self, with_series: bool = True) -> dict:
        out = self.metrics()
        if with_series:
            out["dates"] = [str(d) for d in self.dates]
            out["daily_ic"] = [float(x) for x in self.daily_ic]
            out["daily_rank_ic"] = [float(x) for x in self.daily_rank_ic]
        return out

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _check_axes(alpha: AlphaMatrix, dates: np.ndarray, stocks: Sequence[str]) -> None:
    if alpha.values.shape != (len(dates), len(stocks)):
        raise ValueError("alpha and forward returns have different shapes")
    if not np.array_equal(alpha.dates, dates) or tuple(alpha.stocks) != tuple(stocks):
        raise ValueError("alpha and forward returns have different axes")


def fitness_report(
    alpha: AlphaMatrix,
    fwd: ForwardReturns,
    date_range=None,
    min_cross_section: int = MIN_CROSS_SECTION,
) -> FitnessReport:
    """Aggregate daily cross-sectional correlations between an alpha and forward returns.

    Raises:
        NoValidDates: no date in range had a usable cross-section.
    """
    _check_axes(alpha, fwd.dates, fwd.stocks)
    rows = resolve_range(fwd.dates, date_range)
    a = alpha.values[rows]
    r = fwd.values[rows]
    daily = rowwise_pearson(a, r, min_cross_section)
    daily_rank = rowwise_spearman(a, r, min_cross_section)
    ok = np.isfinite(daily)
    if not ok.any():
        raise NoValidDates(f"no usable dates for {alpha.source}")
    daily, daily_rank = daily[ok], daily_rank[ok]
    sign = -1 if float(np.mean(daily)) < 0 else 1
    daily = sign * daily
    daily_rank = sign * daily_rank
    ic = float(np.mean(daily))
    rank_ic = float(np.mean(daily_rank))
    for arr in (daily, daily_rank):
        arr.setflags(write=False)
    return FitnessReport(
        ic=ic,
        icir=_ratio(ic, daily),
        rank_ic=rank_ic,
        rank_icir=_ratio(rank_ic, daily_rank),
        n_dates_used=int(ok.sum()),
        dates=fwd.dates[rows][ok],
        daily_ic=daily,
        daily_rank_ic=daily_rank,
        sign=sign,
    )


@dataclass(frozen=True, eq=False)
class CorrelationMatrix:
    """Pairwise mean Spearman correlations; NaN for pairs with no usable date."""

    matrix: np.ndarray
    labels: tuple[str, ...]

    @property
    def mean_abs_offdiag(self) -> float:
        k = len(self.matrix)
        off = self.matrix[~np.eye(k, dtype=bool)]
        return float(np.mean(np.abs(off[np.isfinite(off)])))

    @property
    def n_undefined_pairs(self) -> int:
        return int(np.isnan(self.matrix).sum() // 2)


def alpha_correlation_matrix(
    alphas: Sequence[AlphaMatrix],
    date_range=None,
    min_cross_section: int = MIN_CROSS_SECTION,
) -> CorrelationMatrix:
    """Time-averaged cross-sectional Spearman correlation between every pair of alphas.

    A pair that never shares a usable cross-section is left as NaN.

    Raises:
        NoValidDates: no pair has a usable date.
    """
    if len(alphas) < 2:
        raise ValueError("need at least two alphas")
    ref = alphas[0]
    for other in alphas[1:]:
        _check_axes(other, ref.dates, ref.stocks)
    rows = resolve_range(ref.dates, date_range)
    k = len(alphas)
    out = np.eye(k)
    for i in range(k):
        for j in range(i + 1, k):
            daily = rowwise_spearman(alphas[i].values[rows], alphas[j].values[rows], min_cross_section)
            daily = daily[np.isfinite(daily)]
            out[i, j] = out[j, i] = float(np.mean(daily)) if len(daily) else np.nan
    if np.isnan(out[~np.eye(k, dtype=bool)]).all():
        raise NoValidDates("no pair of alphas shares a usable date")
    labels = tuple(str(a.source) for a in alphas)
    return CorrelationMatrix(out, labels)
