import math

import numpy as np
import pytest

from backtest_scenario import hand_ledger, scenario_panel, scenario_scores
from wsgp.backtest import (
    DateRangeOutOfPanel,
    LookAheadError,
    NoTrainingRows,
    SingularDesign,
    fit_linear_model,
    performance_metrics,
    predict,
    predict_matrix,
    run_backtest,
    simulate,
    summarize,
    zscore_rows,
)
from wsgp.evaluator import AlphaMatrix, evaluate
from wsgp.expr import parse
from wsgp.panel import ForwardReturns, MarketPanel, forward_returns
from wsgp.synth import FlagRates, PlantSpec, SynthConfig, synth_panel


def test_hand_ledger():
    panel = scenario_panel()
    rep = simulate(panel, scenario_scores(), slice(1, 12), hold_size=2, rebalance_days=5, cost_rate=0.0006)
    want = hand_ledger()
    assert len(rep.values) == 12
    assert np.abs(rep.values - np.array(want["values"])).max() <= 1e-10
    assert np.abs(rep.daily_costs - np.array(want["costs"])).max() <= 1e-10
    assert np.abs(rep.shares[-1] - np.array(want["shares_final"])).max() <= 1e-10
    day1, day6, day11 = rep.holdings_log
    assert {h.stock: h.weight for h in day1.holdings} == pytest.approx(want["weights_day1"], abs=1e-12)
    assert day6.blocked_buys == ("C",) and day6.blocked_sells == ("A",)
    assert [h.stock for h in day6.holdings] == ["A"]
    assert day6.holdings[0].blocked == ("sell_blocked_suspended",)
    assert day6.cash_weight == pytest.approx(want["day6_cash_weight"], abs=1e-12)
    assert [h.stock for h in day11.holdings] == ["A", "C"]
    assert day11.cash_weight == pytest.approx(0.0, abs=1e-12)


def test_flat_single_stock_zero_cost():
    T = 12
    dates = np.busday_offset(np.datetime64("2024-03-01"), np.arange(T), roll="forward")
    v = np.full((T, 1), 7.0)
    panel = MarketPanel(dates, ("A",), {"close": v, "vwap": v, "volume": v})
    rep = simulate(panel, np.ones((T, 1)), slice(2, T), 1, 5, 0.0)
    assert rep.values[-1] == 1.0 and rep.ar == 0.0 and rep.sr is None


def _random_panel(seed, T=40, N=15):
    cfg = SynthConfig(flag_rates=FlagRates(0.08, 0.08, 0.05, 0.03))
    return synth_panel(np.random.default_rng(seed), T, N, config=cfg)


def _marks(panel, start, stop):
    vwap = panel.field("vwap")
    m = np.full(vwap.shape[1], np.nan)
    out = []
    for t in range(stop):
        ok = np.isfinite(vwap[t])
        m[ok] = vwap[t][ok]
        if t >= start - 1:
            out.append(m.copy())
    return np.array(out)


def _check_conservation(panel, rep, start, stop):
    marks = _marks(panel, start, stop)
    held_val = np.nansum(np.where(rep.shares > 0, rep.shares * marks, 0.0), axis=1)
    assert np.abs(rep.cash + held_val - rep.values).max() <= 1e-10
    pnl = np.nansum(np.where(rep.shares[:-1] > 0, rep.shares[:-1] * (marks[1:] - marks[:-1]), 0.0), axis=1)
    drift = rep.values[1:] - rep.values[:-1] - (pnl - rep.daily_costs[1:])
    assert np.abs(drift).max() <= 1e-10
    assert (rep.values > 0).all() and (rep.cash >= -1e-12).all()
    for r in rep.holdings_log:
        assert sum(h.weight for h in r.holdings) <= 1 + 1e-12


def test_cash_conservation_random():
    for seed in range(100):
        panel = _random_panel(seed)
        rng = np.random.default_rng(seed)
        scores = rng.standard_normal(panel.shape)
        hold = int(rng.integers(1, 8))
        reb = int(rng.integers(1, 6))
        rep = simulate(panel, scores, slice(3, 40), hold, reb, 0.0006)
        _check_conservation(panel, rep, 3, 40)
        # Ret_f = 0 identity
        if rep.sigma_p > 0:
            assert rep.sr == pytest.approx(rep.ar / rep.sigma_p, rel=1e-15)


def test_cost_monotonicity():
    for seed in range(10):
        panel = _random_panel(seed)
        scores = np.random.default_rng(seed).standard_normal(panel.shape)
        a = simulate(panel, scores, slice(3, 40), 5, 5, 0.0006)
        b = simulate(panel, scores, slice(3, 40), 5, 5, 0.0012)
        assert b.values[-1] < a.values[-1]


def _perturb_after(panel, t, rng):
    fields = {}
    for name, arr in panel.fields.items():
        if name == "returns":
            continue
        a = arr.copy()
        a[t + 1:] *= np.exp(rng.normal(0, 0.2, a[t + 1:].shape))
        fields[name] = a
    flags = {k: v.copy() for k, v in panel.flags.items()}
    for k in flags:
        flags[k][t + 1:] = rng.random(flags[k][t + 1:].shape) < 0.1
    return MarketPanel(panel.dates, panel.stocks, fields, flags)


def test_no_look_ahead_fuzz():
    rng = np.random.default_rng(0)
    for seed in range(20):
        panel = _random_panel(seed, T=60, N=20)
        scores = np.random.default_rng(seed).standard_normal(panel.shape)
        base = simulate(panel, scores, slice(5, 60), 4, 3)
        t = int(rng.integers(6, 58))
        moved = _perturb_after(panel, t, rng)
        s2 = scores.copy()
        s2[t:] = rng.standard_normal(s2[t:].shape)  # row t drives trades on t + 1
        other = simulate(moved, s2, slice(5, 60), 4, 3)
        k = t - 5 + 2  # values for dates[4]..dates[t]
        assert np.array_equal(base.values[:k], other.values[:k])
        assert np.array_equal(base.shares[:k], other.shares[:k])
        early = [r for r in base.holdings_log if np.datetime64(r.date) <= panel.dates[t]]
        assert early == other.holdings_log[: len(early)]


def test_no_look_ahead_end_to_end():
    plant = "rank(ts_corr(close,volume,10))"
    panel = synth_panel(np.random.default_rng(3), 120, 40, PlantSpec(plant, 0.3))
    fwd = forward_returns(panel)
    exprs = [parse(plant), parse("rank(delta(close,3))")]
    mats = [evaluate(e, panel) for e in exprs]
    model = fit_linear_model(mats, fwd, (None, str(panel.dates[59])))
    base = run_backtest(model, panel, mats, (str(panel.dates[60]), None), 10)
    rng = np.random.default_rng(1)
    t = 90
    moved = _perturb_after(panel, t, rng)
    other = run_backtest(model, moved, [evaluate(e, moved) for e in exprs], (str(panel.dates[60]), None), 10)
    k = t - 60 + 2
    assert np.array_equal(base.values[:k], other.values[:k])
    refit = fit_linear_model([evaluate(e, moved) for e in exprs], forward_returns(moved), (None, str(panel.dates[59])))
    assert np.array_equal(refit.coefficients, model.coefficients)


def test_look_ahead_rejected():
    panel = synth_panel(np.random.default_rng(3), 80, 30)
    fwd = forward_returns(panel)
    mats = [evaluate(parse("rank(close)"), panel)]
    model = fit_linear_model(mats, fwd, (None, str(panel.dates[40])))
    with pytest.raises(LookAheadError):
        run_backtest(model, panel, mats, (str(panel.dates[40]), None), 5)
    with pytest.raises(DateRangeOutOfPanel):
        simulate(panel, np.zeros(panel.shape), slice(0, 10), 5)


def test_performance_closed_form():
    r = np.full(250, 1e-4)
    p = performance_metrics(r)
    assert p.ar == pytest.approx(1.0001 ** 252 - 1, abs=1e-12)
    assert p.sigma_p == 0.0 and p.sr is None
    n = 100
    alt = np.array([0.01, -0.005] * (n // 2))
    p = performance_metrics(alt)
    ar = (1.01 * 0.995) ** (252 / 2) - 1
    sd = math.sqrt(n / (n - 1)) * 0.0075
    assert p.ar == pytest.approx(ar, abs=1e-12)
    assert p.sigma_p == pytest.approx(sd * math.sqrt(252), abs=1e-12)
    assert p.sr == pytest.approx(ar / (sd * math.sqrt(252)), abs=1e-9)
    assert performance_metrics(-r).ar < 0


def _matrix(values, label):
    T, N = values.shape
    dates = np.busday_offset(np.datetime64("2024-01-01"), np.arange(T), roll="forward")
    return AlphaMatrix(values, parse(label), "t", dates, tuple(f"S{i}" for i in range(N)))


def _fwd_of(values):
    T, N = values.shape
    dates = np.busday_offset(np.datetime64("2024-01-01"), np.arange(T), roll="forward")
    return ForwardReturns(5, values, dates, tuple(f"S{i}" for i in range(N)))


def test_fit_identity_feature():
    rng = np.random.default_rng(0)
    y = rng.standard_normal((50, 30))
    m = fit_linear_model([_matrix(y.copy(), "rank(close)")], _fwd_of(y))
    assert m.coefficients[0] == pytest.approx(1.0, abs=1e-8)
    assert m.intercept == pytest.approx(0.0, abs=1e-8)
    scores = predict(m, [_matrix(y.copy(), "rank(close)")], np.datetime64(_fwd_of(y).dates[3]))
    assert np.allclose(scores, zscore_rows(y[3:4])[0], atol=1e-8)


def test_fit_matches_normal_equations():
    rng = np.random.default_rng(1)
    feats = [rng.standard_normal((50, 30)) for _ in range(3)]
    y = 0.3 * feats[0] - 0.2 * feats[2] + rng.standard_normal((50, 30))
    feats[1][rng.random((50, 30)) < 0.1] = np.nan
    m = fit_linear_model([_matrix(f, "rank(close)") for f in feats], _fwd_of(y))
    rows = slice(0, 50 - 6)
    zs = [zscore_rows(f[rows]) for f in feats]
    zy = zscore_rows(y[rows])
    ok = np.isfinite(zy) & np.all([np.isfinite(z) for z in zs], axis=0)
    X = np.column_stack([np.ones(ok.sum())] + [z[ok] for z in zs])
    beta = np.linalg.solve(X.T @ X, X.T @ zy[ok])
    assert abs(m.intercept - beta[0]) <= 1e-8
    assert np.abs(m.coefficients - beta[1:]).max() <= 1e-8
    assert m.n_train_rows == int(ok.sum())


def test_fit_errors():
    rng = np.random.default_rng(2)
    f = rng.standard_normal((30, 25))
    y = rng.standard_normal((30, 25))
    with pytest.raises(SingularDesign) as info:
        fit_linear_model([_matrix(f, "rank(close)"), _matrix(f.copy(), "rank(open)")], _fwd_of(y))
    assert info.value.collinear == [1]
    with pytest.raises(NoTrainingRows):
        fit_linear_model([_matrix(f, "rank(close)")], _fwd_of(y), (None, str(_fwd_of(y).dates[4])))
    with pytest.raises(NoTrainingRows):
        fit_linear_model([_matrix(np.full((30, 25), np.nan), "rank(close)")], _fwd_of(y))


def test_predict_missing():
    rng = np.random.default_rng(3)
    y = rng.standard_normal((30, 25))
    m = fit_linear_model([_matrix(y.copy(), "rank(close)")], _fwd_of(y))
    out = predict_matrix(m, [_matrix(np.full((30, 25), np.nan), "rank(close)")])
    assert np.isnan(out).all()


def test_summarize_and_report_io(tmp_path):
    panel = scenario_panel()
    rep = simulate(panel, scenario_scores(), slice(1, 12), 2)
    s = summarize(rep)
    assert s == {"ar": rep.ar, "sr": rep.sr}
    rep.write_value_csv(tmp_path / "v.csv")
    rep.write_holdings_csv(tmp_path / "h.csv")
    lines = (tmp_path / "v.csv").read_text().splitlines()
    assert lines[0] == "date,value" and len(lines) == 13
