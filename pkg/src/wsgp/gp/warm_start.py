"""Warm-start GP: evolve within the structure of a single seed alpha."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from typing import Sequence

import numpy as np

from wsgp.expr import DEFAULT_REGISTRY, AlphaExpr, Registry, parse, signature
from wsgp.gp.engine import FitnessCache, GpConfig, GpRun, Individual, evolve, select
from wsgp.gp.operators import point_mutation, restricted_crossover
from wsgp.panel import ForwardReturns, MarketPanel


class SeedEvaluationFailed(RuntimeError):
    pass


def _warm_start_variation(config: GpConfig, registry: Registry):
    def vary(rng: np.random.Generator, t_next: int, pool: Sequence[Individual]) -> AlphaExpr:
        k = config.tournament_size
        if t_next == 1:
            op = "point"
        else:
            u = rng.random()
            op = "crossover" if u < config.p_crossover else "point" if u < config.p_crossover + config.p_point else "copy"
        if op == "crossover":
            p1 = select(rng, pool, k)
            p2 = select(rng, pool, k)
            return restricted_crossover(rng, p1.expr, p2.expr, registry)
        p1 = select(rng, pool, k)
        if op == "point":
            return point_mutation(rng, p1.expr, registry, config.const_factor)
        return p1.expr

    return vary


def run_warm_start(
    config: GpConfig,
    seed_alpha: AlphaExpr | str,
    panel: MarketPanel,
    fwd: ForwardReturns,
    date_range=None,
    registry: Registry = DEFAULT_REGISTRY,
) -> GpRun:
    """Search the seed's structure for a fitter alpha.

    Generation 0 is the seed alone; generation 1 is built by point mutation
    only; later generations mix restricted crossover, point mutation and
    reproduction. Every generation starts with the previous best and never
    holds two individuals with the same printed form.

    Raises:
        SeedEvaluationFailed: the seed has no usable fitness on ``panel``.
    """
    if isinstance(seed_alpha, str):
        seed_alpha = parse(seed_alpha, registry)
    cache = FitnessCache(panel, fwd, date_range, registry, config.min_cross_section, config.n_workers,
                         config.min_dates_used)
    initial = cache.individuals([seed_alpha])
    if initial[0].report is None:
        raise SeedEvaluationFailed(f"seed {initial[0].text} could not be evaluated")
    rng = np.random.default_rng(config.rng_seed)
    run = GpRun(config, seed_alpha, signature(seed_alpha, registry), kind="warm_start")
    return evolve(config, rng, initial, _warm_start_variation(config, registry), cache, run)


def run_multi_seed(
    configs_and_seeds: Sequence[tuple[GpConfig, AlphaExpr | str]],
    panel: MarketPanel,
    fwd: ForwardReturns,
    date_range=None,
    registry: Registry = DEFAULT_REGISTRY,
    n_workers: int = 1,
) -> list[GpRun | Exception]:
    """Independent warm-start runs; run ``i`` uses ``rng_seed + i``.

    Failed runs are returned in place as the exception they raised.
    """

    def one(item):
        i, (cfg, seed) = item
        try:
            return run_warm_start(replace(cfg, rng_seed=cfg.rng_seed + i), seed, panel, fwd, date_range, registry)
        except Exception as exc:  # noqa: BLE001 - captured per run by contract
            return exc

    items = list(enumerate(configs_and_seeds))
    if n_workers <= 1:
        return [one(it) for it in items]
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(one, items))
