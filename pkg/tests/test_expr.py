import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wsgp.expr import (
    DEFAULT_REGISTRY,
    ArityMismatch,
    Const,
    DepthExceeded,
    DslSyntaxError,
    Field,
    Op,
    OperatorSpec,
    Registry,
    SlotKind,
    SlotKindMismatch,
    UnknownField,
    UnknownOperator,
    Window,
    WindowOutOfRange,
    depth,
    parse,
    random_expr,
    random_same_structure,
    signature,
    size,
    to_text,
    validate,
    walk,
)
from wsgp.expr.registry import OpFamily


def test_parse_binary():
    assert parse("sub(close, open)") == Op("sub", (Field("close"), Field("open")))


def test_parse_nested_windows_round_trip():
    e = parse("ts_rank(div(close, delay(close, 5)), 20)")
    assert e.children[1] == Window(20)
    assert e.children[0].children[1].children[1] == Window(5)
    assert parse(to_text(e)) == e


def test_print_normalizes_whitespace():
    assert to_text(parse("ts_rank( div( close , delay(close,5) ) ,20)")) == "ts_rank(div(close,delay(close,5)),20)"
    assert to_text(Op("sub", (Field("close"), Field("open")))) == "sub(close,open)"


@pytest.mark.parametrize(
    "src, err",
    [
        ("ts_mean(close, 99)", WindowOutOfRange),
        ("ts_mean(close, 1)", WindowOutOfRange),
        ("foo(close)", UnknownOperator),
        ("rank(bogus)", UnknownField),
        ("sub(close)", ArityMismatch),
        ("sub(close, open, high)", ArityMismatch),
        ("ts_mean(close, open)", SlotKindMismatch),
        ("ts_mean(5, close)", SlotKindMismatch),
        ("ts_mean(close, 2.5)", SlotKindMismatch),
        ("sub(close, open", DslSyntaxError),
        ("sub(close, open))", DslSyntaxError),
        ("", DslSyntaxError),
        ("sub(close,,open)", DslSyntaxError),
    ],
)
def test_parse_errors(src, err):
    with pytest.raises(err):
        parse(src)


def test_error_carries_span():
    with pytest.raises(UnknownField) as info:
        parse("sub(close, foo)")
    assert info.value.span is not None
    assert "foo" in str(info.value)


def test_depth_limit():
    src = "abs(" * 8 + "close" + ")" * 8
    with pytest.raises(DepthExceeded):
        parse(src)
    assert depth(parse(src, max_depth=9)) == 9


def test_constants_round_trip():
    e = parse("mul(close, -0.5)")
    assert e.children[1] == Const(-0.5)
    assert parse(to_text(e)) == e
    assert parse(to_text(parse("add(close, 1e-3)"))) == parse("add(close,0.001)")


def test_signature_examples():
    assert signature(parse("sub(close,open)")) == signature(parse("div(high,low)"))
    assert signature(parse("sub(close,open)")) != signature(parse("abs(close)"))
    # same shape, different operator families of the same slot pattern
    same = ["ts_mean(sub(close,open),10)", "ts_std(div(high,low),5)", "ts_sum(mul(vwap,volume),20)",
            "decay_linear(add(turnover,returns),30)"]
    assert len({signature(parse(s)) for s in same}) == 1
    # window slot is not a data slot
    assert signature(parse("ts_mean(close,10)")) != signature(parse("sub(close,open)"))


def _small_trees(depth_left):
    leaves = [Field("close"), Window(5)]
    if depth_left == 1:
        return leaves
    out = list(leaves)
    sub = _small_trees(depth_left - 1)
    for a in sub:
        out.append(Op("abs", (a,)))
    for a, b in itertools.product(sub, repeat=2):
        out.append(Op("sub", (a, b)))
        out.append(Op("ts_mean", (a, b)))
    return out


def _shape_key(e):
    if isinstance(e, Op):
        return (len(e.children), tuple(k.value for k in DEFAULT_REGISTRY.get(e.name).slot_kinds),
                tuple(_shape_key(c) for c in e.children))
    return type(e).__name__


def test_signature_iff_same_shape_exhaustive():
    # every valid tree up to depth 3 built from one unary, one binary and one windowed op
    trees = []
    for e in _small_trees(3):
        try:
            validate(e)
        except Exception:
            continue
        trees.append(e)
    assert len(trees) > 20
    for a, b in itertools.product(trees, repeat=2):
        assert (signature(a) == signature(b)) == (_shape_key(a) == _shape_key(b))


def test_random_expr_depth_one_is_field():
    rng = np.random.default_rng(0)
    for _ in range(20):
        assert isinstance(random_expr(rng, 1), Field)


def test_random_expr_deterministic():
    a = random_expr(np.random.default_rng(7), 6)
    b = random_expr(np.random.default_rng(7), 6)
    assert a == b


def test_random_expr_always_valid():
    rng = np.random.default_rng(1)
    for _ in range(10_000):
        e = random_expr(rng, 6)
        validate(e, max_depth=6)
        assert not any(isinstance(n, Const) for _, n in walk(e))


def test_random_same_structure():
    rng = np.random.default_rng(2)
    donor = parse("sub(close,open)")
    binary = set(DEFAULT_REGISTRY.peers("sub"))
    donor2 = parse("ts_corr(rank(close),delay(volume,3),20)")
    sig2 = signature(donor2)
    for _ in range(10_000):
        e = random_same_structure(rng, donor)
        assert e.name in binary and all(isinstance(c, Field) for c in e.children)
        f = random_same_structure(rng, donor2)
        assert signature(f) == sig2
        assert 2 <= f.children[2].days <= 60


def test_registry_peers_and_windows():
    assert "add" in DEFAULT_REGISTRY.peers("sub")
    assert "abs" not in DEFAULT_REGISTRY.peers("sub")
    assert "ts_std" in DEFAULT_REGISTRY.peers("ts_mean")
    assert list(DEFAULT_REGISTRY.windows) == list(range(2, 61))


def test_operator_spec_validation():
    with pytest.raises(ValueError):
        OperatorSpec("w", (SlotKind.WINDOW,), OpFamily.TIME_SERIES)
    with pytest.raises(ValueError):
        OperatorSpec("z", (), OpFamily.ELEMENTWISE)


def test_registry_extension():
    reg = Registry.from_dict({"extend": True, "fields": ["close", "open", "amount"]})
    e = parse("rank(amount)", reg)
    assert to_text(e) == "rank(amount)"
    with pytest.raises(UnknownField):
        parse("rank(amount)")


def test_golden_printing():
    path = __import__("pathlib").Path(__file__).parent / "golden" / "canonical_print.txt"
    lines = path.read_text().splitlines()
    for line in lines:
        src, expected = line.split("\t")
        assert to_text(parse(src)) == expected


@st.composite
def trees(draw):
    seed = draw(st.integers(0, 2**32 - 1))
    d = draw(st.integers(1, 8))
    return random_expr(np.random.default_rng(seed), d)


@settings(max_examples=300, deadline=None)
@given(trees())
def test_round_trip_property(e):
    assert parse(to_text(e)) == e
    assert size(e) == len(list(walk(e)))


def test_print_injective_on_sample():
    rng = np.random.default_rng(3)
    seen = {}
    for _ in range(1000):
        e = random_expr(rng, 6)
        t = to_text(e)
        if t in seen:
            assert seen[t] == e
        seen[t] = e
