import math

import numpy as np
import pytest

from wsgp.evaluator import evaluate
from wsgp.expr import parse, random_expr
from wsgp.fitness import NoValidDates, fitness_report
from wsgp.panel import (
    CSV_HEADER,
    DuplicateCell,
    EmptyInput,
    MalformedRow,
    MarketPanel,
    PanelError,
    forward_returns,
    load_csv,
    resolve_range,
    write_csv,
)
from wsgp.synth import InvalidPlantStrength, PlantSpec, synth_panel

HEADER = ",".join(CSV_HEADER)


def _write(tmp_path, rows, name="p.csv"):
    p = tmp_path / name
    p.write_text(HEADER + "\n" + "\n".join(rows) + "\n")
    return p


def test_load_small_file(tmp_path):
    rows = [
        "2024-01-03,B,1,2,0.5,1.5,1.4,100,0.1,0,0,0,0",
        "2024-01-02,A,10,11,9,10.5,10.2,200,0.2,1,0,0,0",
        "2024-01-02,B,2,2,2,2,2,300,0.3,0,0,0,1",
        "2024-01-03,A,11,12,10,11.5,11.2,250,0.2,0,1,0,0",
        "2024-01-04,A,12,13,11,12.5,12.2,260,0.2,0,0,0,0",
        "2024-01-04,B,3,3,3,3,,310,0.3,0,0,1,0",
    ]
    panel = load_csv(_write(tmp_path, rows))
    assert panel.shape == (3, 2)
    assert panel.stocks == ("A", "B")
    assert [str(d) for d in panel.dates] == ["2024-01-02", "2024-01-03", "2024-01-04"]
    close = panel.field("close")
    assert close[0, 0] == 10.5 and close[1, 1] == 1.5 and close[2, 0] == 12.5
    assert math.isnan(panel.field("vwap")[2, 1])
    assert panel.flags["limit_up"][0, 0] and panel.flags["limit_down"][1, 0]
    assert panel.flags["st"][0, 1] and panel.flags["suspended"][2, 1]
    assert panel.field("returns")[1, 0] == pytest.approx(11.5 / 10.5 - 1)
    assert math.isnan(panel.field("returns")[0, 0])


def test_duplicate_cell(tmp_path):
    rows = ["2024-01-02,A,1,1,1,1,1,1,1,0,0,0,0", "2024-01-02,A,1,1,1,1,1,1,1,0,0,0,0"]
    with pytest.raises(DuplicateCell) as info:
        load_csv(_write(tmp_path, rows))
    assert info.value.line == 3


@pytest.mark.parametrize(
    "row",
    [
        "2024-01-02,A,1,1,1,1,1,1",
        "2024-13-02,A,1,1,1,1,1,1,1,0,0,0,0",
        "2024-01-02,A,x,1,1,1,1,1,1,0,0,0,0",
        "2024-01-02,A,1,1,1,-1,1,1,1,0,0,0,0",
        "2024-01-02,A,1,1,1,1,1,1,1,2,0,0,0",
        "2024-01-02,,1,1,1,1,1,1,1,0,0,0,0",
    ],
)
def test_malformed_rows(tmp_path, row):
    with pytest.raises(MalformedRow) as info:
        load_csv(_write(tmp_path, [row]))
    assert info.value.line == 2


def test_empty_and_missing(tmp_path):
    with pytest.raises(EmptyInput):
        load_csv(_write(tmp_path, []))
    with pytest.raises(FileNotFoundError):
        load_csv(tmp_path / "absent.csv")


def test_multiple_files_union(tmp_path):
    _write(tmp_path, ["2024-01-02,A,1,1,1,1,1,1,1,0,0,0,0"], "a.csv")
    _write(tmp_path, ["2024-01-03,B,2,2,2,2,2,2,2,0,0,0,0"], "b.csv")
    panel = load_csv(tmp_path)
    assert panel.shape == (2, 2)
    assert math.isnan(panel.field("close")[0, 1])
    assert load_csv(str(tmp_path / "*.csv")).shape == (2, 2)


def test_csv_round_trip(tmp_path, small_panel):
    p = tmp_path / "panel.csv"
    write_csv(small_panel, p)
    back = load_csv(p)
    assert back.stocks == small_panel.stocks
    assert np.array_equal(back.dates, small_panel.dates)
    for f in small_panel.fields:
        assert np.array_equal(back.field(f), small_panel.field(f), equal_nan=True), f
    for f in small_panel.flags:
        assert np.array_equal(back.flags[f], small_panel.flags[f])
    assert back.panel_id == small_panel.panel_id


def test_panel_validation():
    d = np.array(["2024-01-02", "2024-01-03"], dtype="datetime64[D]")
    with pytest.raises(PanelError):
        MarketPanel(d[::-1], ("A",), {"close": np.ones((2, 1))})
    with pytest.raises(PanelError):
        MarketPanel(d, ("A", "A"), {"close": np.ones((2, 2))})
    with pytest.raises(PanelError):
        MarketPanel(d, ("A",), {"close": -np.ones((2, 1))})
    p = MarketPanel(d, ("A",), {"close": np.ones((2, 1))})
    with pytest.raises(ValueError):
        p.field("close")[0, 0] = 3.0


def _one_stock(vwap):
    n = len(vwap)
    dates = np.arange(np.datetime64("2024-01-01"), np.datetime64("2024-01-01") + n)
    v = np.array(vwap, dtype=float)[:, None]
    return MarketPanel(dates, ("A",), {"vwap": v, "close": np.where(np.isnan(v), 1.0, v), "volume": np.ones_like(v)})


def test_forward_return_hand_value():
    fwd = forward_returns(_one_stock([100, 100, 110, 110, 110, 110, 121]), 5)
    assert fwd.values[0, 0] == pytest.approx(0.21, abs=1e-15)
    assert np.isnan(fwd.values[1:, 0]).all()


def test_forward_return_constant_and_missing():
    fwd = forward_returns(_one_stock([5.0] * 12), 5)
    ok = np.isfinite(fwd.values)
    assert ok.sum() == 6 and (fwd.values[ok] == 0).all()
    v = [5.0] * 12
    v[3] = np.nan
    fwd = forward_returns(_one_stock(v), 5)
    # vwap[3] is the entry for t=2 and the exit for t=-3 (none)
    assert np.isnan(fwd.values[2, 0])
    assert np.isfinite(fwd.values[0, 0]) and np.isfinite(fwd.values[3, 0])


def test_forward_return_brute_force(small_panel):
    fwd = forward_returns(small_panel, 5)
    vwap = small_panel.field("vwap")
    T, N = vwap.shape
    for t in range(T):
        for i in range(N):
            if t + 6 < T and np.isfinite(vwap[t + 1, i]) and np.isfinite(vwap[t + 6, i]):
                assert fwd.values[t, i] == vwap[t + 6, i] / vwap[t + 1, i] - 1
            else:
                assert np.isnan(fwd.values[t, i])


def test_resolve_range(small_panel):
    d = small_panel.dates
    assert resolve_range(d, None) == slice(0, len(d))
    s = resolve_range(d, (str(d[3]), str(d[10])))
    assert (s.start, s.stop) == (3, 11)
    s = resolve_range(d, (None, str(d[4])))
    assert (s.start, s.stop) == (0, 5)


def test_synth_planted_ic_band(planted_panel, planted_fwd):
    rep = fitness_report(evaluate(parse("rank(ts_corr(close,volume,10))"), planted_panel), planted_fwd)
    assert 0.2 <= rep.ic <= 0.4


def test_synth_ic_monotone_in_strength():
    plant = "ts_mean(div(close,open),5)"
    ics = []
    for rho in (0.1, 0.3, 0.5):
        panel = synth_panel(np.random.default_rng(4), 200, 80, PlantSpec(plant, rho))
        rep = fitness_report(evaluate(parse(plant), panel), forward_returns(panel))
        ics.append(rep.ic)
    assert ics[0] < ics[1] < ics[2]


def test_synth_null_mean_abs_ic():
    panel = synth_panel(np.random.default_rng(9), 250, 100)
    fwd = forward_returns(panel)
    rng = np.random.default_rng(0)
    ics = []
    while len(ics) < 200:
        try:
            ics.append(fitness_report(evaluate(random_expr(rng, 4), panel), fwd).ic)
        except NoValidDates:
            continue
        except Exception:
            continue
    assert np.mean(ics) < 0.02


def test_synth_deterministic():
    a = synth_panel(np.random.default_rng(1), 40, 15, PlantSpec("rank(close)", 0.2))
    b = synth_panel(np.random.default_rng(1), 40, 15, PlantSpec("rank(close)", 0.2))
    assert a.panel_id == b.panel_id


def test_synth_invariants(small_panel):
    for f in ("close", "vwap", "volume"):
        v = small_panel.field(f)
        assert (v[np.isfinite(v)] > 0).all()
    hi, lo = small_panel.field("high"), small_panel.field("low")
    for f in ("open", "close", "vwap"):
        v = small_panel.field(f)
        ok = np.isfinite(v)
        assert (v[ok] <= hi[ok] + 1e-12).all() and (v[ok] >= lo[ok] - 1e-12).all()
    assert not (small_panel.flags["limit_up"] & small_panel.flags["limit_down"]).any()


def test_plant_strength_bounds():
    for bad in (0.0, 1.0, -0.2, 1.5):
        with pytest.raises(InvalidPlantStrength):
            PlantSpec("rank(close)", bad)
