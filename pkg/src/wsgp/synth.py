"""Synthetic market panels with an optional planted alpha.

VWAP is the base price path. Daily log-moves ``eta`` (market + idiosyncratic)
define it, and open/close/high/low scatter around it. With a plant, VWAP is
built by the recurrence

    vwap[s] = vwap[s - h] * exp(L[s - h - 1])

so that the forward return ``vwap[t+h+1] / vwap[t+1] - 1`` equals
``exp(L[t]) - 1`` exactly. ``L[t]`` is the sum of the idiosyncratic moves
over days ``t+2 .. t+h+1`` plus ``b * z[t]``, where ``z[t]`` is the
cross-sectionally standardised planted alpha at ``t``. Since the noise part
is independent of anything known at ``t``, ``b`` is chosen to give a
cross-sectional correlation of ``strength``. Without a plant ``b = 0`` and
the recurrence reduces to a plain geometric random walk.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from wsgp.evaluator import evaluate, lookback
from wsgp.expr import DEFAULT_REGISTRY, AlphaExpr, Registry, parse
from wsgp.panel import MarketPanel


class InvalidPlantStrength(ValueError):
    pass


@dataclass(frozen=True)
class PlantSpec:
    expr: AlphaExpr
    strength: float

    def __post_init__(self):
        if isinstance(self.expr, str):
            object.__setattr__(self, "expr", parse(self.expr))
        if not 0.0 < self.strength < 1.0:
            raise InvalidPlantStrength(f"strength must be in (0, 1), got {self.strength}")


@dataclass(frozen=True)
class FlagRates:
    limit_up: float = 0.01
    limit_down: float = 0.01
    suspended: float = 0.005
    st: float = 0.002


@dataclass(frozen=True)
class SynthConfig:
    daily_vol: float = 0.015
    market_vol: float = 0.01
    intraday_noise: float = 0.004
    horizon_days: int = 5
    flag_rates: FlagRates = field(default_factory=FlagRates)
    start_date: str = "2020-01-02"


def _business_days(start: str, n: int) -> np.ndarray:
    first = np.busday_offset(np.datetime64(start, "D"), 0, roll="forward")
    return np.busday_offset(first, np.arange(n), roll="forward")


def _standardize(row: np.ndarray) -> np.ndarray:
    ok = np.isfinite(row)
    z = np.zeros_like(row)
    if ok.sum() < 2:
        return z
    v = row[ok]
    sd = v.std()
    if sd == 0:
        return z
    z[ok] = (v - v.mean()) / sd
    return z


def synth_panel(
    rng: np.random.Generator,
    n_dates: int,
    n_stocks: int,
    planted: PlantSpec | None = None,
    config: SynthConfig = SynthConfig(),
    registry: Registry = DEFAULT_REGISTRY,
) -> MarketPanel:
    """Generate a random panel; see the module docstring for the planting scheme."""
    if n_dates < 20 or n_stocks < 10:
        raise ValueError("need n_dates >= 20 and n_stocks >= 10")
    T, N, h = n_dates, n_stocks, config.horizon_days
    dates = _business_days(config.start_date, T)
    stocks = tuple(f"S{j:04d}" for j in range(N))

    # everything random is drawn up front so the plant only changes the price path
    idio_vol = rng.uniform(0.5, 1.5, size=N) * config.daily_vol
    eta = rng.standard_normal((T, N)) * idio_vol
    market = rng.standard_normal(T) * config.market_vol
    p0 = np.exp(rng.uniform(math.log(5.0), math.log(100.0), size=N))
    noise_close = rng.standard_normal((T, N)) * config.intraday_noise
    noise_open = rng.standard_normal((T, N)) * config.intraday_noise
    wick_hi = np.abs(rng.standard_normal((T, N))) * config.intraday_noise
    wick_lo = np.abs(rng.standard_normal((T, N))) * config.intraday_noise
    shares = np.exp(rng.uniform(math.log(5e7), math.log(5e9), size=N))
    log_volume = np.log(shares * 0.01) + rng.standard_normal((T, N)) * 0.35
    fr = config.flag_rates
    u = rng.random((T, N))
    limit_up = u < fr.limit_up
    limit_down = (u >= fr.limit_up) & (u < fr.limit_up + fr.limit_down)
    suspended = rng.random((T, N)) < fr.suspended
    st = rng.random((T, N)) < fr.st

    volume = np.exp(log_volume)
    flags = {"limit_up": limit_up, "limit_down": limit_down, "suspended": suspended, "st": st}
    steps = eta + market[:, None]
    steps[0] = 0.0

    def assemble(vwap: np.ndarray, lo: int = 0) -> dict[str, np.ndarray]:
        rows = slice(lo, lo + len(vwap))
        close = vwap * np.exp(noise_close[rows])
        open_ = vwap * np.exp(noise_open[rows])
        high = np.maximum(np.maximum(open_, close), vwap) * np.exp(wick_hi[rows])
        low = np.minimum(np.minimum(open_, close), vwap) * np.exp(-wick_lo[rows])
        vol = volume[rows]
        return {
            "open": open_, "high": high, "low": low, "close": close,
            "vwap": vwap, "volume": vol, "turnover": vol / shares,
        }

    if planted is None:
        vwap = p0 * np.exp(np.cumsum(steps, axis=0))
        return MarketPanel(dates, stocks, assemble(vwap), flags)

    rho = planted.strength
    # noise part of L[t] sums h idiosyncratic moves, variance h * vol^2 per stock
    noise_sd = math.sqrt(h) * float(np.sqrt(np.mean(idio_vol ** 2)))
    b = rho * noise_sd / math.sqrt(1.0 - rho * rho)
    cum = np.cumsum(steps, axis=0)
    need = lookback(planted.expr, registry)
    vwap = np.empty((T, N))
    z = np.zeros((T, N))
    for s in range(T):
        if s <= h:
            vwap[s] = p0 * np.exp(cum[s])
        else:
            t = s - h - 1
            noise = cum[s] - cum[t + 1]
            vwap[s] = vwap[s - h] * np.exp(noise + b * z[t])
        if s < T - h - 1:
            lo = max(0, s - need - 1)
            part = MarketPanel(
                dates[lo: s + 1],
                stocks,
                assemble(vwap[lo: s + 1], lo),
                {k: v[lo: s + 1] for k, v in flags.items()},
            )
            z[s] = _standardize(evaluate(planted.expr, part, registry).values[-1])
    return MarketPanel(dates, stocks, assemble(vwap), flags)
