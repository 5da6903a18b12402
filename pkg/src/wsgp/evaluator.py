"""Vectorised evaluation of alpha expressions over a market panel.

Semantics (Alpha101 conventions):

* elementwise operators act per cell; ``div`` by ``|y| < 1e-12`` and ``log``
  of non-positive values give NaN;
* ``rank`` and ``scale`` act per date over the panel universe (close present,
  not suspended); ``rank`` uses average ties scaled to ``[0, 1]``;
* time-series operators act per stock over a full trailing window; any
  missing value inside the window makes the output missing.

The final matrix is masked to the universe.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.stats import rankdata

from wsgp.expr import AlphaExpr, Const, Field, Op, OpFamily, Registry, Window, DEFAULT_REGISTRY
from wsgp.panel import MarketPanel, MissingField

DIV_EPS = 1e-12


class EvaluationError(RuntimeError):
    pass


class EvaluationOverflow(EvaluationError):
    pass


class UnknownKernel(EvaluationError):
    pass


@dataclass(frozen=True, eq=False)
class AlphaMatrix:
    values: np.ndarray
    source: AlphaExpr
    panel_id: str
    dates: np.ndarray
    stocks: tuple[str, ...]

    def to_csv(self, path: str | os.PathLike) -> None:
        """Write ``date,stock_id,value`` rows; missing cells are left empty."""
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["date", "stock_id", "value"])
            for i, d in enumerate(self.dates):
                for j, s in enumerate(self.stocks):
                    v = self.values[i, j]
                    w.writerow([str(d), s, "" if np.isnan(v) else repr(float(v))])


# -- elementwise -------------------------------------------------------------

def _div(x, y):
    out = np.full(np.broadcast(x, y).shape, np.nan)
    ok = np.abs(y) >= DIV_EPS
    np.divide(x, y, out=out, where=ok)
    return out


def _log(x):
    out = np.full(np.shape(x), np.nan)
    np.log(x, out=out, where=x > 0)
    return out


# -- cross-sectional -----------------------------------------------------------

def cs_rank(x: np.ndarray) -> np.ndarray:
    """Average-tie rank per row over finite cells, mapped to ``[0, 1]``.

    A row with a single finite cell gets 0.5.
    """
    x = np.asarray(x, dtype=float)
    finite = np.isfinite(x)
    n = finite.sum(axis=1, keepdims=True).astype(float)
    if x.shape[1] == 0:
        return x.copy()
    r = rankdata(np.where(finite, x, np.nan), axis=1, nan_policy="omit")
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(n > 1, (r - 1.0) / (n - 1.0), 0.5)
    out[~finite] = np.nan
    return out


def cs_scale(x: np.ndarray) -> np.ndarray:
    """Divide each row by its sum of absolute values (missing if that sum < 1e-12)."""
    s = np.nansum(np.abs(x), axis=1, keepdims=True)
    return _div(x, s)


# -- time series -------------------------------------------------------------

def _rolling(x: np.ndarray, d: int, fn: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    out = np.full(x.shape, np.nan)
    if d <= x.shape[0]:
        out[d - 1:] = fn(sliding_window_view(x, d, axis=0))
    return out


def _any_nan(w: np.ndarray) -> np.ndarray:
    return np.isnan(w).any(axis=-1)


def ts_mean(x, d):
    return _rolling(x, d, lambda w: w.mean(axis=-1))


def ts_sum(x, d):
    return _rolling(x, d, lambda w: w.sum(axis=-1))


def ts_std(x, d):
    return _rolling(x, d, lambda w: w.std(axis=-1, ddof=1))


def ts_min(x, d):
    return _rolling(x, d, lambda w: w.min(axis=-1))


def ts_max(x, d):
    return _rolling(x, d, lambda w: w.max(axis=-1))


def _masked(fn):
    def apply(w):
        out = fn(w).astype(float)
        out[_any_nan(w)] = np.nan
        return out
    return apply


def ts_argmax(x, d):
    return _rolling(x, d, _masked(lambda w: np.argmax(w, axis=-1) + 1.0))


def ts_argmin(x, d):
    return _rolling(x, d, _masked(lambda w: np.argmin(w, axis=-1) + 1.0))


def ts_rank(x, d):
    def fn(w):
        last = w[..., -1:]
        less = (w < last).sum(axis=-1)
        equal = (w == last).sum(axis=-1)
        return (less + (equal - 1) / 2.0) / (d - 1)
    return _rolling(x, d, _masked(fn))


def delay(x, d):
    out = np.full(x.shape, np.nan)
    if d < x.shape[0]:
        out[d:] = x[:-d]
    return out


def delta(x, d):
    return x - delay(x, d)


def decay_linear(x, d):
    w = np.arange(1, d + 1, dtype=float)
    w /= w.sum()
    return _rolling(x, d, lambda win: win @ w)


def _pair_rolling(x, y, d, fn):
    out = np.full(x.shape, np.nan)
    if d <= x.shape[0]:
        out[d - 1:] = fn(sliding_window_view(x, d, axis=0), sliding_window_view(y, d, axis=0))
    return out


def ts_cov(x, y, d):
    def fn(wx, wy):
        dx = wx - wx.mean(axis=-1, keepdims=True)
        dy = wy - wy.mean(axis=-1, keepdims=True)
        return (dx * dy).sum(axis=-1) / (d - 1)
    return _pair_rolling(x, y, d, fn)


def ts_corr(x, y, d):
    def fn(wx, wy):
        dx = wx - wx.mean(axis=-1, keepdims=True)
        dy = wy - wy.mean(axis=-1, keepdims=True)
        cov = (dx * dy).sum(axis=-1)
        den = np.sqrt((dx * dx).sum(axis=-1) * (dy * dy).sum(axis=-1))
        # constant windows have no correlation
        flat = (np.ptp(wx, axis=-1) == 0) | (np.ptp(wy, axis=-1) == 0)
        return np.where(flat, np.nan, _div(cov, den))
    return _pair_rolling(x, y, d, fn)


ELEMENTWISE: dict[str, Callable] = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "div": _div,
    "abs": np.abs,
    "log": _log,
    "sign": np.sign,
    "neg": np.negative,
}
CROSS_SECTIONAL: dict[str, Callable] = {"rank": cs_rank, "scale": cs_scale}
TIME_SERIES: dict[str, Callable] = {
    "ts_mean": ts_mean,
    "ts_std": ts_std,
    "ts_min": ts_min,
    "ts_max": ts_max,
    "ts_sum": ts_sum,
    "ts_rank": ts_rank,
    "ts_argmax": ts_argmax,
    "ts_argmin": ts_argmin,
    "delay": delay,
    "delta": delta,
    "decay_linear": decay_linear,
    "ts_corr": ts_corr,
    "ts_cov": ts_cov,
}
KERNELS = {
    OpFamily.ELEMENTWISE: ELEMENTWISE,
    OpFamily.CROSS_SECTIONAL: CROSS_SECTIONAL,
    OpFamily.TIME_SERIES: TIME_SERIES,
}


def lookback(e: AlphaExpr, registry: Registry = DEFAULT_REGISTRY) -> int:
    """Number of prior rows an expression needs before its first defined value."""
    if not isinstance(e, Op):
        # returns are derived from the previous close
        return 1 if isinstance(e, Field) and e.name == "returns" else 0
    spec = registry.get(e.name)
    base = max(lookback(c, registry) for c in e.children)
    if spec.family is not OpFamily.TIME_SERIES:
        return base
    d = next(c.days for c in e.children if isinstance(c, Window))
    return base + (d if spec.kernel in ("delay", "delta") else d - 1)


class _Evaluator:
    def __init__(self, panel: MarketPanel, registry: Registry):
        self.panel = panel
        self.registry = registry
        self.universe = panel.universe()

    def run(self, e: AlphaExpr) -> np.ndarray:
        if isinstance(e, Field):
            return self.panel.field(e.name)
        if isinstance(e, Const):
            return np.full(self.panel.shape, e.value)
        if isinstance(e, Window):
            raise EvaluationError("window literal outside a window slot")
        spec = self.registry.get(e.name)
        try:
            kernel = KERNELS[spec.family][spec.kernel]
        except KeyError:
            raise UnknownKernel(f"no {spec.family.value} kernel named {spec.kernel!r}") from None
        if spec.family is OpFamily.TIME_SERIES:
            args = [c.days if isinstance(c, Window) else self.run(c) for c in e.children]
        else:
            args = [self.run(c) for c in e.children]
        if spec.family is OpFamily.CROSS_SECTIONAL:
            args = [np.where(self.universe, a, np.nan) for a in args]
        with np.errstate(all="ignore"):
            out = np.asarray(kernel(*args), dtype=float)
        if np.isinf(out).any():
            raise EvaluationOverflow(f"non-finite values produced by {e.name}")
        return out


def evaluate(e: AlphaExpr, panel: MarketPanel, registry: Registry = DEFAULT_REGISTRY) -> AlphaMatrix:
    """Evaluate ``e`` bottom-up on ``panel``.

    Raises:
        MissingField: a referenced field is not in the panel.
        EvaluationOverflow: an intermediate result is infinite.
    """
    ev = _Evaluator(panel, registry)
    values = ev.run(e)
    values = np.where(ev.universe, values, np.nan)
    values.setflags(write=False)
    return AlphaMatrix(values, e, panel.panel_id, panel.dates, panel.stocks)


def batch_evaluate(
    exprs: Sequence[AlphaExpr],
    panel: MarketPanel,
    registry: Registry = DEFAULT_REGISTRY,
    n_workers: int = 1,
) -> list[AlphaMatrix | Exception]:
    """Evaluate many expressions; failures are returned in place, not raised."""

    def one(e):
        try:
            return evaluate(e, panel, registry)
        except (EvaluationError, MissingField) as exc:
            return exc

    if n_workers <= 1 or len(exprs) < 2:
        return [one(e) for e in exprs]
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(one, exprs))


__all__ = [
    "AlphaMatrix", "EvaluationError", "EvaluationOverflow", "UnknownKernel",
    "batch_evaluate", "cs_rank", "cs_scale", "evaluate", "lookback",
]
