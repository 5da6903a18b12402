"""Traditional GP baseline and random-sampling sparsity experiments."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from wsgp.expr import DEFAULT_REGISTRY, AlphaExpr, Registry, random_expr, random_same_structure
from wsgp.gp.engine import MIN_DATES_USED, FitnessCache, GpConfig, GpRun, Individual, evolve, select
from wsgp.gp.operators import point_mutation, subtree_crossover, subtree_mutation
from wsgp.panel import ForwardReturns, MarketPanel


@dataclass(frozen=True)
class BaselineParams:
    """Initialisation and mutation settings of the traditional GP.

    ``max_depth`` is the ramp ceiling for the initial population and
    ``depth_cap`` the hard limit for every offspring. A mutation event is a
    subtree mutation with probability ``subtree_fraction``, else a point
    mutation.
    """

    max_depth: int = 6
    depth_cap: int = 8
    n_init_pop: int | None = None
    subtree_fraction: float = 0.5
    p_terminal: float = 0.3

    def __post_init__(self):
        if not 2 <= self.max_depth <= self.depth_cap:
            raise ValueError("need 2 <= max_depth <= depth_cap")
        if not 0.0 <= self.subtree_fraction <= 1.0:
            raise ValueError("subtree_fraction must be in [0, 1]")


def ramped_population(
    rng: np.random.Generator,
    n: int,
    max_depth: int,
    registry: Registry = DEFAULT_REGISTRY,
    p_terminal: float = 0.3,
    attempt_cap: int | None = None,
) -> list[AlphaExpr]:
    """Distinct random trees with depth limits cycling through ``2..max_depth``."""
    depths = list(range(2, max_depth + 1))
    out: list[AlphaExpr] = []
    seen: set[str] = set()
    attempts = 0
    cap = attempt_cap or 50 * n
    while len(out) < n and attempts < cap:
        e = random_expr(rng, depths[attempts % len(depths)], registry, p_terminal)
        attempts += 1
        key = str(e)
        if key not in seen:
            seen.add(key)
            out.append(e)
    return out


def run_traditional_gp(
    config: GpConfig,
    panel: MarketPanel,
    fwd: ForwardReturns,
    date_range=None,
    params: BaselineParams = BaselineParams(),
    registry: Registry = DEFAULT_REGISTRY,
) -> GpRun:
    """Unconstrained GP from a ramped random population."""
    rng = np.random.default_rng(config.rng_seed)
    cache = FitnessCache(panel, fwd, date_range, registry, config.min_cross_section, config.n_workers,
                         config.min_dates_used)
    init = ramped_population(rng, params.n_init_pop or config.n_pop, params.max_depth, registry, params.p_terminal)
    initial = cache.individuals(init)
    cap = params.depth_cap

    def vary(rng: np.random.Generator, t_next: int, pool: Sequence[Individual]) -> AlphaExpr:
        k = config.tournament_size
        u = rng.random()
        if u < config.p_crossover:
            p1 = select(rng, pool, k)
            p2 = select(rng, pool, k)
            return subtree_crossover(rng, p1.expr, p2.expr, cap)
        p1 = select(rng, pool, k)
        if u < config.p_crossover + config.p_point:
            if rng.random() < params.subtree_fraction:
                return subtree_mutation(rng, p1.expr, cap, registry, params.p_terminal)
            return point_mutation(rng, p1.expr, registry, config.const_factor)
        return p1.expr

    run = GpRun(config, None, None, kind="traditional")
    return evolve(config, rng, initial, vary, cache, run)


@dataclass(frozen=True, eq=False)
class SparsityReport:
    n_samples: int
    ic_values: np.ndarray
    threshold: float
    n_failed: int
    mode: str
    bin_edges: np.ndarray = field(repr=False)
    counts: np.ndarray = field(repr=False)

    @property
    def effective_fraction(self) -> float:
        return float(np.count_nonzero(self.ic_values > self.threshold)) / self.n_samples

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "n_samples": self.n_samples,
            "n_failed": self.n_failed,
            "threshold": self.threshold,
            "effective_fraction": self.effective_fraction,
            "mean_ic": float(np.mean(self.ic_values)),
            "bin_edges": [float(x) for x in self.bin_edges],
            "counts": [int(c) for c in self.counts],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def histogram(values: np.ndarray, bins: int | np.ndarray = 50) -> tuple[np.ndarray, np.ndarray]:
    values = np.asarray(values, dtype=float)
    if isinstance(bins, int):
        lo, hi = float(values.min()), float(values.max())
        if hi <= lo:
            hi = lo + 1e-9
        bins = np.linspace(lo, hi, bins + 1)
    counts, edges = np.histogram(values, bins=bins)
    return edges, counts


def sparsity_experiment(
    rng: np.random.Generator,
    n_samples: int,
    panel: MarketPanel,
    fwd: ForwardReturns,
    date_range=None,
    threshold: float = 0.03,
    donor: AlphaExpr | None = None,
    max_depth: int = 6,
    registry: Registry = DEFAULT_REGISTRY,
    min_cross_section: int = 20,
    bins: int | np.ndarray = 50,
    min_dates_used: int = MIN_DATES_USED,
) -> SparsityReport:
    """IC distribution of random alphas.

    Without ``donor`` samples come from :func:`random_expr` (unconstrained);
    with one they come from :func:`random_same_structure`. ICs are
    sign-flipped (non-negative); failed evaluations, and alphas scored on
    fewer than ``min_dates_used`` dates, count as IC 0.
    """
    if n_samples < 100:
        raise ValueError("n_samples must be >= 100")
    cache = FitnessCache(panel, fwd, date_range, registry, min_cross_section, min_dates_used=min_dates_used)
    ics = np.empty(n_samples)
    failed = 0
    for i in range(n_samples):
        e = random_same_structure(rng, donor, registry) if donor is not None else random_expr(rng, max_depth, registry)
        ind = cache.individuals([e])[0]
        if ind.report is None:
            failed += 1
            ics[i] = 0.0
        else:
            ics[i] = ind.report.ic
    edges, counts = histogram(ics, bins)
    mode = "same_structure" if donor is not None else "unconstrained"
    return SparsityReport(n_samples, ics, threshold, failed, mode, edges, counts)


def write_histogram_csv(reports: Sequence[SparsityReport], path: str | os.PathLike, bins: int = 50) -> None:
    """Overlaid histogram on shared bins: ``bin_left,bin_right,<mode>...``."""
    allv = np.concatenate([r.ic_values for r in reports])
    edges, _ = histogram(allv, bins)
    cols = [np.histogram(r.ic_values, bins=edges)[0] for r in reports]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_left", "bin_right"] + [r.mode for r in reports])
        for b in range(len(edges) - 1):
            w.writerow([repr(float(edges[b])), repr(float(edges[b + 1]))] + [int(c[b]) for c in cols])
