"""Random expression generation."""

from __future__ import annotations

import numpy as np

from wsgp.expr.nodes import AlphaExpr, Const, Field, Op, Window
from wsgp.expr.registry import DEFAULT_REGISTRY, Registry, SlotKind


def random_field(rng: np.random.Generator, registry: Registry = DEFAULT_REGISTRY) -> Field:
    return Field(registry.fields[rng.integers(len(registry.fields))])


def random_window(rng: np.random.Generator, registry: Registry = DEFAULT_REGISTRY) -> Window:
    return Window(int(rng.integers(registry.min_window, registry.max_window + 1)))


def random_expr(
    rng: np.random.Generator,
    max_depth: int,
    registry: Registry = DEFAULT_REGISTRY,
    p_terminal: float = 0.3,
) -> AlphaExpr:
    """Grow-method random tree of depth at most ``max_depth``.

    The root is always an operator when ``max_depth >= 2``; below it each
    data slot becomes a field with probability ``p_terminal`` (or when the
    depth budget runs out). Constants are never generated.
    """
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    return _grow(rng, max_depth, registry, p_terminal, root=True)


def _grow(rng, budget, registry, p_terminal, root=False):
    if budget <= 1 or (not root and rng.random() < p_terminal):
        return random_field(rng, registry)
    spec = registry.operators[rng.integers(len(registry.operators))]
    kids = tuple(
        random_window(rng, registry) if k is SlotKind.WINDOW else _grow(rng, budget - 1, registry, p_terminal)
        for k in spec.slot_kinds
    )
    return Op(spec.name, kids)


def random_same_structure(
    rng: np.random.Generator, donor: AlphaExpr, registry: Registry = DEFAULT_REGISTRY
) -> AlphaExpr:
    """Resample every label of ``donor`` while keeping its signature.

    Operators are drawn from the donor operator's slot-kind class, fields
    from the field set and windows from the window range. Constants are
    kept as they are.
    """
    if isinstance(donor, Op):
        peers = registry.peers(donor.name)
        name = peers[rng.integers(len(peers))]
        return Op(name, tuple(random_same_structure(rng, c, registry) for c in donor.children))
    if isinstance(donor, Field):
        return random_field(rng, registry)
    if isinstance(donor, Window):
        return random_window(rng, registry)
    assert isinstance(donor, Const)
    return donor
