"""Linear alpha model and a top-N equal-weight backtest with trading constraints.

Trading rules at each rebalance day ``t`` (every ``rebalance_days`` test days,
counted from the first test day):

* stocks are ranked by the model score of day ``t - 1``; the target is the
  top ``hold_size`` stocks that trade on ``t`` (VWAP present, not suspended)
  and are not ST-flagged;
* held stocks outside the target are sold unless limit-down or suspended, in
  which case they are carried and retried at the next rebalance;
* target stocks not yet held that are limit-up cannot be bought; the capital
  left after carried positions is split equally over the remaining targets;
* trades move each target toward that equal value; a buy blocked by limit-up
  or a sell blocked by limit-down leaves the position as is; buys are scaled
  down pro rata when cash (after sells and costs) is short;
* every trade fills at the day's VWAP and pays ``cost_rate`` of its notional.

On other days ST-flagged holdings are sold when sellable and the cash waits
for the next rebalance. Positions are marked at the latest VWAP.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from wsgp.evaluator import AlphaMatrix
from wsgp.expr import AlphaExpr, to_text
from wsgp.panel import ForwardReturns, MarketPanel, index_of_date, resolve_range

TRADING_DAYS = 252


class BacktestError(ValueError):
    pass


class SingularDesign(BacktestError):
    def __init__(self, collinear: list[int]):
        self.collinear = collinear
        super().__init__(f"features {collinear} are linearly dependent on earlier features")


class NoTrainingRows(BacktestError):
    pass


class DateRangeOutOfPanel(BacktestError):
    pass


class LookAheadError(BacktestError):
    pass


class InsufficientEligibleStocks(BacktestError):
    pass


def zscore_rows(x: np.ndarray) -> np.ndarray:
    """Per-row z-score over finite cells (population std); degenerate rows become NaN."""
    x = np.asarray(x, dtype=float)
    m = np.isfinite(x)
    n = m.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        mu = np.where(m, x, 0.0).sum(axis=1, keepdims=True) / n
        dev = np.where(m, x - mu, 0.0)
        sd = np.sqrt((dev * dev).sum(axis=1, keepdims=True) / n)
        out = (x - mu) / sd
    flat = (np.where(m, x, -np.inf).max(axis=1) == np.where(m, x, np.inf).min(axis=1))[:, None]
    out[~m | (n < 2) | flat | (sd == 0)] = np.nan
    return out


@dataclass(frozen=True, eq=False)
class LinearAlphaModel:
    feature_alphas: tuple[AlphaExpr, ...]
    coefficients: np.ndarray
    intercept: float
    train_range: tuple[str, str]  # first fitted date, last date whose data the fit consumed
    n_train_rows: int
    standardization: str = "cross_sectional_zscore"

    def to_dict(self) -> dict:
        return {
            "features": [to_text(e) for e in self.feature_alphas],
            "coefficients": [float(c) for c in self.coefficients],
            "intercept": float(self.intercept),
            "train_range": list(self.train_range),
            "n_train_rows": self.n_train_rows,
            "standardization": self.standardization,
        }


def _collinear_features(design: np.ndarray) -> list[int]:
    bad = []
    cols = [0]
    for j in range(1, design.shape[1]):
        trial = cols + [j]
        if np.linalg.matrix_rank(design[:, trial]) < len(trial):
            bad.append(j - 1)
        else:
            cols = trial
    return bad


def fit_linear_model(
    alphas: Sequence[AlphaMatrix],
    fwd: ForwardReturns,
    train_range=None,
) -> LinearAlphaModel:
    """Pooled OLS of the z-scored forward return on z-scored alphas.

    Only dates whose forward window closes inside ``train_range`` are used,
    so nothing after the range end leaks into the fit.

    Raises:
        NoTrainingRows: no complete (date, stock) cell in range.
        SingularDesign: some features are collinear; their indices are attached.
    """
    if not alphas:
        raise ValueError("need at least one alpha")
    rows = resolve_range(fwd.dates, train_range)
    last_date = str(fwd.dates[rows.stop - 1])
    stop = rows.stop - (fwd.horizon_days + 1)
    if stop <= rows.start:
        raise NoTrainingRows("train range shorter than the forward horizon")
    rows = slice(rows.start, stop)
    feats = np.stack([zscore_rows(a.values[rows]) for a in alphas])
    y = zscore_rows(fwd.values[rows])
    ok = np.isfinite(y) & np.isfinite(feats).all(axis=0)
    if not ok.any():
        raise NoTrainingRows("no complete training cells")
    X = np.column_stack([np.ones(int(ok.sum()))] + [f[ok] for f in feats])
    target = y[ok]
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise SingularDesign(_collinear_features(X))
    beta, *_ = np.linalg.lstsq(X, target, rcond=None)
    return LinearAlphaModel(
        feature_alphas=tuple(a.source for a in alphas),
        coefficients=beta[1:],
        intercept=float(beta[0]),
        train_range=(str(fwd.dates[rows.start]), last_date),
        n_train_rows=int(ok.sum()),
    )


def predict_matrix(model: LinearAlphaModel, alphas: Sequence[AlphaMatrix]) -> np.ndarray:
    if len(alphas) != len(model.coefficients):
        raise ValueError(f"model has {len(model.coefficients)} features, got {len(alphas)} alphas")
    out = np.full(alphas[0].values.shape, model.intercept)
    for c, a in zip(model.coefficients, alphas):
        out = out + c * zscore_rows(a.values)
    return out


def predict(model: LinearAlphaModel, alphas: Sequence[AlphaMatrix], date) -> np.ndarray:
    """Score vector for one date; a stock missing any feature scores NaN."""
    i = index_of_date(alphas[0].dates, date)
    if len(alphas) != len(model.coefficients):
        raise ValueError(f"model has {len(model.coefficients)} features, got {len(alphas)} alphas")
    out = np.full(alphas[0].values.shape[1], model.intercept)
    for c, a in zip(model.coefficients, alphas):
        out = out + c * zscore_rows(a.values[i: i + 1])[0]
    return out


@dataclass(frozen=True)
class Holding:
    stock: str
    weight: float
    fill_price: float
    shares: float
    blocked: tuple[str, ...] = ()


@dataclass(frozen=True)
class RebalanceRecord:
    date: str
    holdings: tuple[Holding, ...]
    blocked_buys: tuple[str, ...]
    blocked_sells: tuple[str, ...]
    cash_weight: float


@dataclass(frozen=True)
class Performance:
    ar: float
    sigma_p: float
    sr: float | None


def performance_metrics(daily_returns: Sequence[float]) -> Performance:
    """Annualised return, volatility and Sharpe ratio (risk-free rate 0).

    ``sr`` is ``None`` when volatility is zero.
    """
    r = np.asarray(daily_returns, dtype=float)
    if len(r) == 0:
        raise ValueError("need at least one daily return")
    growth = float(np.prod(1.0 + r))
    ar = growth ** (TRADING_DAYS / len(r)) - 1.0
    if len(r) < 2 or np.ptp(r) == 0:
        sigma = 0.0
    else:
        sigma = float(np.std(r, ddof=1)) * math.sqrt(TRADING_DAYS)
    sr = ar / sigma if sigma > 0 else None
    return Performance(ar, sigma, sr)


@dataclass(eq=False)
class BacktestReport:
    dates: np.ndarray
    values: np.ndarray
    cash: np.ndarray
    shares: np.ndarray
    daily_costs: np.ndarray
    holdings_log: list[RebalanceRecord]
    stocks: tuple[str, ...]
    hold_size: int
    cost_rate: float
    performance: Performance = field(init=False)

    def __post_init__(self):
        self.performance = performance_metrics(self.daily_returns)

    @property
    def daily_returns(self) -> np.ndarray:
        return self.values[1:] / self.values[:-1] - 1.0

    @property
    def ar(self) -> float:
        return self.performance.ar

    @property
    def sr(self) -> float | None:
        return self.performance.sr

    @property
    def sigma_p(self) -> float:
        return self.performance.sigma_p

    @property
    def cost_paid(self) -> float:
        return float(self.daily_costs.sum())

    def to_dict(self) -> dict:
        return {
            "hold_size": self.hold_size,
            "cost_rate": self.cost_rate,
            "ar": self.ar,
            "sr": self.sr,
            "sigma_p": self.sigma_p,
            "cost_paid": self.cost_paid,
            "final_value": float(self.values[-1]),
            "dates": [str(d) for d in self.dates],
            "values": [float(v) for v in self.values],
            "rebalances": [
                {
                    "date": r.date,
                    "cash_weight": r.cash_weight,
                    "blocked_buys": list(r.blocked_buys),
                    "blocked_sells": list(r.blocked_sells),
                    "holdings": [
                        {"stock": h.stock, "weight": h.weight, "fill_price": h.fill_price,
                         "shares": h.shares, "blocked": list(h.blocked)}
                        for h in r.holdings
                    ],
                }
                for r in self.holdings_log
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def write_value_csv(self, path: str | os.PathLike) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["date", "value"])
            for d, v in zip(self.dates, self.values):
                w.writerow([str(d), repr(float(v))])

    def write_holdings_csv(self, path: str | os.PathLike) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["date", "stock_id", "weight", "fill_price", "shares", "blocked"])
            for r in self.holdings_log:
                for h in r.holdings:
                    w.writerow([r.date, h.stock, repr(h.weight), repr(h.fill_price), repr(h.shares),
                                ";".join(h.blocked)])


def summarize(report: BacktestReport) -> dict:
    return {"ar": report.ar, "sr": report.sr}


_TINY = 1e-12


def simulate(
    panel: MarketPanel,
    scores: np.ndarray,
    test_rows: slice,
    hold_size: int,
    rebalance_days: int = 5,
    cost_rate: float = 0.0006,
) -> BacktestReport:
    """Run the trading rules given a score matrix; row ``t - 1`` drives trades on ``t``."""
    if hold_size < 1:
        raise InsufficientEligibleStocks("hold_size must be >= 1")
    if rebalance_days < 1 or cost_rate < 0:
        raise ValueError("rebalance_days must be >= 1 and cost_rate >= 0")
    start, stop = test_rows.start, test_rows.stop
    if start < 1 or stop > len(panel.dates) or stop <= start:
        raise DateRangeOutOfPanel("test range must lie in the panel and start after its first date")
    vwap = panel.field("vwap")
    lim_up, lim_dn = panel.flags["limit_up"], panel.flags["limit_down"]
    susp, st = panel.flags["suspended"], panel.flags["st"]
    N = len(panel.stocks)

    mark = np.full(N, np.nan)
    for t in range(start):
        ok = np.isfinite(vwap[t])
        mark[ok] = vwap[t][ok]

    cash = 1.0
    shares = np.zeros(N)
    values, cash_hist, share_hist, costs = [1.0], [1.0], [shares.copy()], [0.0]
    log: list[RebalanceRecord] = []

    for k, t in enumerate(range(start, stop)):
        px = vwap[t]
        ok = np.isfinite(px)
        mark[ok] = px[ok]
        tradable = ok & ~susp[t]
        sellable = tradable & ~lim_dn[t]
        buyable = tradable & ~lim_up[t]
        cost_today = 0.0

        def sell(i: int, n_shares: float) -> None:
            nonlocal cash, cost_today
            notional = n_shares * px[i]
            cash += notional * (1.0 - cost_rate)
            cost_today += notional * cost_rate
            shares[i] -= n_shares
            if shares[i] < _TINY * max(1.0, n_shares):
                shares[i] = 0.0

        if k % rebalance_days == 0:
            s = scores[t - 1]
            eligible = np.isfinite(s) & tradable & ~st[t]
            idx = np.flatnonzero(eligible)
            order = idx[np.lexsort((idx, -s[idx]))]
            target = [int(i) for i in order[:hold_size]]
            in_target = np.zeros(N, dtype=bool)
            in_target[target] = True
            held = shares > 0

            blocked_sells = []
            for i in np.flatnonzero(held & ~in_target):
                if sellable[i]:
                    sell(i, shares[i])
                else:
                    blocked_sells.append(int(i))
            active = [i for i in target if held[i] or buyable[i]]
            blocked_buys = [i for i in target if not held[i] and not buyable[i]]

            blocked_trim: list[int] = []
            blocked_add: list[int] = []
            if active:
                pos_val = shares * mark
                carried = float(sum(pos_val[i] for i in blocked_sells))
                total = cash + float(np.nansum(np.where(shares > 0, pos_val, 0.0)))
                goal = (total - carried) / len(active)
                current = {i: (pos_val[i] if shares[i] > 0 else 0.0) for i in active}
                for i in active:
                    excess = current[i] - goal
                    if excess > _TINY:
                        if sellable[i]:
                            sell(i, excess / px[i])
                        else:
                            blocked_trim.append(i)
                wants = {}
                for i in active:
                    need = goal - current[i]
                    if need > _TINY:
                        if buyable[i]:
                            wants[i] = need
                        else:
                            blocked_add.append(i)
                need_cash = sum(wants.values()) * (1.0 + cost_rate)
                scale = 1.0 if need_cash <= cash else cash / need_cash
                for i, x in wants.items():
                    x *= scale
                    shares[i] += x / px[i]
                    cash -= x * (1.0 + cost_rate)
                    cost_today += x * cost_rate
                if scale < 1.0:
                    cash = max(cash, 0.0)

            value_now = cash + float(np.sum(shares[shares > 0] * mark[shares > 0]))
            reasons: dict[int, list[str]] = {}
            for i in blocked_sells:
                reasons.setdefault(i, []).append("sell_blocked_suspended" if susp[t, i] or not ok[i] else "sell_blocked_limit_down")
            for i in blocked_trim:
                reasons.setdefault(i, []).append("trim_blocked_limit_down")
            for i in blocked_add:
                reasons.setdefault(i, []).append("add_blocked_limit_up")
            holdings = tuple(
                Holding(
                    panel.stocks[i],
                    float(shares[i] * mark[i] / value_now),
                    float(mark[i]),
                    float(shares[i]),
                    tuple(reasons.get(int(i), ())),
                )
                for i in np.flatnonzero(shares > 0)
            )
            log.append(
                RebalanceRecord(
                    str(panel.dates[t]),
                    holdings,
                    tuple(panel.stocks[i] for i in blocked_buys),
                    tuple(panel.stocks[i] for i in blocked_sells),
                    float(cash / value_now),
                )
            )
        else:
            for i in np.flatnonzero((shares > 0) & st[t] & sellable):
                sell(i, shares[i])

        held = shares > 0
        values.append(cash + float(np.sum(shares[held] * mark[held])))
        cash_hist.append(cash)
        share_hist.append(shares.copy())
        costs.append(cost_today)

    return BacktestReport(
        dates=panel.dates[start - 1: stop],
        values=np.array(values),
        cash=np.array(cash_hist),
        shares=np.array(share_hist),
        daily_costs=np.array(costs),
        holdings_log=log,
        stocks=panel.stocks,
        hold_size=hold_size,
        cost_rate=cost_rate,
    )


def run_backtest(
    model: LinearAlphaModel,
    panel: MarketPanel,
    alphas: Sequence[AlphaMatrix],
    test_range,
    hold_size: int,
    rebalance_days: int = 5,
    cost_rate: float = 0.0006,
) -> BacktestReport:
    """Trade the model's day ``t - 1`` predictions over ``test_range``.

    Raises:
        LookAheadError: the test range starts on or before the last training date.
        DateRangeOutOfPanel: the range is empty or has no prior day for scores.
    """
    try:
        rows = resolve_range(panel.dates, test_range)
    except ValueError as exc:
        raise DateRangeOutOfPanel(str(exc)) from None
    train_end = np.datetime64(model.train_range[1], "D")
    if panel.dates[rows.start] <= train_end:
        raise LookAheadError(f"test range starts at {panel.dates[rows.start]}, training ends {train_end}")
    scores = predict_matrix(model, alphas)
    return simulate(panel, scores, rows, hold_size, rebalance_days, cost_rate)
