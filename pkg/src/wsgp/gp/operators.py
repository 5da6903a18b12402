"""Variation and selection operators.

Structure-preserving operators (restricted crossover, point mutation) serve
the warm-start search; subtree crossover and subtree mutation serve the
traditional baseline.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from wsgp.expr import (
    DEFAULT_REGISTRY,
    AlphaExpr,
    Const,
    Field,
    Op,
    Registry,
    SignatureMismatch,
    Window,
    depth,
    node_at,
    random_expr,
    replace_at,
    signature,
    walk,
)


class NoMutablePoint(ValueError):
    pass


class EmptyPopulation(ValueError):
    pass


def restricted_crossover(
    rng: np.random.Generator,
    p1: AlphaExpr,
    p2: AlphaExpr,
    registry: Registry = DEFAULT_REGISTRY,
    position: int | None = None,
) -> AlphaExpr:
    """Swap in ``p2``'s subtree at the same preorder position of ``p1``.

    The position is uniform over non-root nodes (the root only for
    single-node trees). Both parents must share a structure signature, so
    the positions line up and the offspring keeps the signature.
    """
    if signature(p1, registry) != signature(p2, registry):
        raise SignatureMismatch(f"{p1} and {p2} have different structures")
    paths = [path for path, _ in walk(p1)]
    if position is None:
        position = 0 if len(paths) == 1 else int(rng.integers(1, len(paths)))
    path = paths[position]
    return replace_at(p1, path, node_at(p2, path))


def _relabel_choices(node: AlphaExpr, registry: Registry) -> int:
    if isinstance(node, Op):
        return len(registry.peers(node.name))
    if isinstance(node, Field):
        return len(registry.fields)
    if isinstance(node, Window):
        return len(registry.windows)
    return 2 if node.value != 0.0 else 1


def point_mutation(
    rng: np.random.Generator,
    p: AlphaExpr,
    registry: Registry = DEFAULT_REGISTRY,
    const_factor: float = 1.5,
) -> AlphaExpr:
    """Relabel one node within its kind class, keeping the signature.

    The node is drawn uniformly among nodes whose class has another member,
    and the new label always differs from the old one. Constants are
    multiplied or divided by ``const_factor``.

    Raises:
        NoMutablePoint: no node can change.
    """
    mutable = [(path, n) for path, n in walk(p) if _relabel_choices(n, registry) > 1]
    if not mutable:
        raise NoMutablePoint(f"no node of {p} can be relabelled")
    path, node = mutable[int(rng.integers(len(mutable)))]
    if isinstance(node, Op):
        others = [o for o in registry.peers(node.name) if o != node.name]
        new: AlphaExpr = Op(others[int(rng.integers(len(others)))], node.children)
    elif isinstance(node, Field):
        others = [f for f in registry.fields if f != node.name]
        new = Field(others[int(rng.integers(len(others)))])
    elif isinstance(node, Window):
        others = [w for w in registry.windows if w != node.days]
        new = Window(others[int(rng.integers(len(others)))])
    else:
        factor = const_factor if rng.random() < 0.5 else 1.0 / const_factor
        new = Const(node.value * factor)
    return replace_at(p, path, new)


def tournament_select(rng: np.random.Generator, fitness: Sequence[float], k: int) -> int:
    """Index of the fittest of ``k`` entrants drawn without replacement.

    Ties go to the lower index (earlier insertion).
    """
    n = len(fitness)
    if n == 0:
        raise EmptyPopulation("cannot select from an empty population")
    if not 1 <= k <= n:
        raise ValueError(f"tournament size {k} not in [1, {n}]")
    entrants = rng.choice(n, size=k, replace=False)
    return int(min(entrants, key=lambda i: (-fitness[i], i)))


def tournament_win_probabilities(n: int, k: int) -> np.ndarray:
    """Exact win probability of the individual ranked ``j`` (0 = fittest), distinct fitness."""
    from math import comb

    total = comb(n, k)
    return np.array([comb(n - 1 - j, k - 1) / total for j in range(n)])


@dataclass(frozen=True)
class _Slot:
    path: tuple[int, ...]
    is_window: bool


def _slots(e: AlphaExpr) -> list[_Slot]:
    return [_Slot(path, isinstance(n, Window)) for path, n in walk(e)]


def subtree_crossover(
    rng: np.random.Generator,
    p1: AlphaExpr,
    p2: AlphaExpr,
    max_depth: int,
    attempts: int = 20,
) -> AlphaExpr:
    """Replace a random subtree of ``p1`` with a random subtree of ``p2``.

    Data subtrees swap with data subtrees and windows with windows. Offspring
    deeper than ``max_depth`` are redrawn; after ``attempts`` failures ``p1``
    is returned unchanged.
    """
    s1, s2 = _slots(p1), _slots(p2)
    for _ in range(attempts):
        a = s1[int(rng.integers(len(s1)))]
        pool = [s for s in s2 if s.is_window == a.is_window]
        if not pool:
            continue
        b = pool[int(rng.integers(len(pool)))]
        child = replace_at(p1, a.path, node_at(p2, b.path))
        if depth(child) <= max_depth:
            return child
    return p1


def subtree_mutation(
    rng: np.random.Generator,
    p: AlphaExpr,
    max_depth: int,
    registry: Registry = DEFAULT_REGISTRY,
    p_terminal: float = 0.3,
) -> AlphaExpr:
    """Replace a random data subtree with a fresh random tree that fits the depth cap."""
    data = [path for path, n in walk(p) if not isinstance(n, Window)]
    path = data[int(rng.integers(len(data)))]
    budget = max(1, max_depth - len(path))
    return replace_at(p, path, random_expr(rng, budget, registry, p_terminal))
