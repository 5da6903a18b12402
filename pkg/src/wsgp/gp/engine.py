"""Shared evolutionary loop: elitism, tournament parents, duplicate rejection, termination."""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from wsgp.evaluator import EvaluationError, evaluate
from wsgp.expr import DEFAULT_REGISTRY, AlphaExpr, Registry, StructureSignature, to_text
from wsgp.fitness import MIN_CROSS_SECTION, FitnessReport, NoValidDates, fitness_report
from wsgp.gp.operators import tournament_select
from wsgp.panel import ForwardReturns, MarketPanel, MissingField

# fewer usable dates than this and an IC is mostly noise
MIN_DATES_USED = 20


@dataclass(frozen=True)
class GpConfig:
    """Search hyperparameters.

    ``p_crossover + p_point <= 1``; the remainder is reproduction.
    ``dedup_attempt_cap`` defaults to ``50 * n_pop``. Individuals scored on
    fewer than ``min_dates_used`` dates get fitness ``-inf``.
    """

    n_pop: int = 200
    p_crossover: float = 0.6
    p_point: float = 0.35
    tournament_size: int = 5
    max_generations: int = 30
    stagnation_patience: int = 10
    min_improvement: float = 1e-4
    dedup_attempt_cap: int | None = None
    rng_seed: int = 0
    min_cross_section: int = MIN_CROSS_SECTION
    min_dates_used: int = MIN_DATES_USED
    const_factor: float = 1.5
    n_workers: int = 1

    def __post_init__(self):
        for name in ("p_crossover", "p_point"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.p_crossover + self.p_point > 1.0 + 1e-12:
            raise ValueError("p_crossover + p_point must not exceed 1")
        if self.n_pop < 2:
            raise ValueError("n_pop must be >= 2")
        if not 2 <= self.tournament_size <= self.n_pop:
            raise ValueError("tournament_size must be in [2, n_pop]")
        if self.max_generations < 0 or self.stagnation_patience < 1:
            raise ValueError("max_generations must be >= 0 and stagnation_patience >= 1")
        if self.dedup_attempt_cap is None:
            object.__setattr__(self, "dedup_attempt_cap", 50 * self.n_pop)

    @classmethod
    def from_dict(cls, data: dict) -> "GpConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown GP config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


class Termination(str, Enum):
    MAX_GENERATIONS = "MaxGenerations"
    STAGNATION = "Stagnation"
    POPULATION_EXHAUSTED = "PopulationExhausted"


@dataclass(frozen=True, eq=False)
class Individual:
    expr: AlphaExpr
    text: str
    report: FitnessReport | None
    fitness: float


@dataclass(eq=False)
class Generation:
    individuals: list[Individual]
    best: int
    exhausted: bool = False

    @property
    def best_individual(self) -> Individual:
        return self.individuals[self.best]

    @property
    def best_fitness(self) -> float:
        return self.individuals[self.best].fitness


@dataclass(eq=False)
class GpRun:
    config: GpConfig
    seed_alpha: AlphaExpr | None
    signature: StructureSignature | None
    generations: list[Generation] = field(default_factory=list)
    terminated_reason: Termination = Termination.MAX_GENERATIONS
    kind: str = "warm_start"

    @property
    def best(self) -> Individual:
        return self.generations[-1].best_individual

    def best_fitness_curve(self) -> list[float]:
        return [g.best_fitness for g in self.generations]

    def to_dict(self, full: bool = False) -> dict:
        gens = []
        for t, g in enumerate(self.generations):
            b = g.best_individual
            item = {
                "generation": t,
                "size": len(g.individuals),
                "exhausted": g.exhausted,
                "best": b.text,
                "best_fitness": _finite_or_none(b.fitness),
                "best_metrics": b.report.metrics() if b.report else None,
            }
            if full:
                item["population"] = [[i.text, _finite_or_none(i.fitness)] for i in g.individuals]
            gens.append(item)
        return {
            "kind": self.kind,
            "config": self.config.to_dict(),
            "seed_alpha": to_text(self.seed_alpha) if self.seed_alpha is not None else None,
            "signature": str(self.signature) if self.signature is not None else None,
            "terminated_reason": self.terminated_reason.value,
            "best": self.best.text,
            "generations": gens,
        }

    def to_json(self, full: bool = False) -> str:
        return json.dumps(self.to_dict(full), indent=2, sort_keys=True)


def _finite_or_none(x: float) -> float | None:
    return x if math.isfinite(x) else None


class FitnessCache:
    """Evaluates expressions to :class:`Individual`, memoised on printed form.

    Failed evaluations, and reports on fewer than ``min_dates_used`` dates,
    get fitness ``-inf`` and no report.
    """

    def __init__(
        self,
        panel: MarketPanel,
        fwd: ForwardReturns,
        date_range=None,
        registry: Registry = DEFAULT_REGISTRY,
        min_cross_section: int = MIN_CROSS_SECTION,
        n_workers: int = 1,
        min_dates_used: int = MIN_DATES_USED,
    ):
        self.panel = panel
        self.fwd = fwd
        self.date_range = date_range
        self.registry = registry
        self.min_cross_section = min_cross_section
        self.n_workers = n_workers
        self.min_dates_used = min_dates_used
        self._memo: dict[str, tuple[FitnessReport | None, float]] = {}

    def _score(self, expr: AlphaExpr) -> tuple[FitnessReport | None, float]:
        try:
            alpha = evaluate(expr, self.panel, self.registry)
            rep = fitness_report(alpha, self.fwd, self.date_range, self.min_cross_section)
        except (EvaluationError, MissingField, NoValidDates):
            return None, -math.inf
        if rep.n_dates_used < self.min_dates_used:
            return None, -math.inf
        return rep, rep.fitness

    def individuals(self, exprs: Sequence[AlphaExpr]) -> list[Individual]:
        texts = [to_text(e) for e in exprs]
        todo = {}
        for t, e in zip(texts, exprs):
            if t not in self._memo and t not in todo:
                todo[t] = e
        if todo:
            keys = list(todo)
            if self.n_workers > 1 and len(keys) > 1:
                with ThreadPoolExecutor(max_workers=self.n_workers) as pool:
                    results = list(pool.map(self._score, [todo[k] for k in keys]))
            else:
                results = [self._score(todo[k]) for k in keys]
            self._memo.update(zip(keys, results))
        return [Individual(e, t, *self._memo[t]) for e, t in zip(exprs, texts)]


def best_index(pop: Sequence[Individual]) -> int:
    return min(range(len(pop)), key=lambda i: (-pop[i].fitness, i))


# vary(rng, t_next, parent_pool) -> offspring expression
Variation = Callable[[np.random.Generator, int, Sequence[Individual]], AlphaExpr]


def evolve(
    config: GpConfig,
    rng: np.random.Generator,
    initial: list[Individual],
    vary: Variation,
    cache: FitnessCache,
    run: GpRun,
) -> GpRun:
    """Run the generational loop from ``initial`` and fill ``run.generations``."""
    run.generations.append(Generation(initial, best_index(initial)))
    best_so_far = run.generations[0].best_fitness
    stale = 0
    t = 0
    while t < config.max_generations:
        prev = run.generations[-1]
        elite = prev.best_individual
        exprs = [elite.expr]
        seen = {elite.text}
        rejections = 0
        exhausted = False
        while len(exprs) < config.n_pop:
            child = vary(rng, t + 1, prev.individuals)
            key = to_text(child)
            if key in seen:
                rejections += 1
                if rejections >= config.dedup_attempt_cap:
                    exhausted = True
                    break
                continue
            seen.add(key)
            exprs.append(child)
        pop = cache.individuals(exprs)
        gen = Generation(pop, best_index(pop))
        run.generations.append(gen)
        t += 1
        gen.exhausted = exhausted
        # a lone seed has a finite one-point neighbourhood, so a short generation 1 is kept
        if exhausted and (t > 1 or len(pop) < 2):
            run.terminated_reason = Termination.POPULATION_EXHAUSTED
            return run
        if gen.best_fitness - best_so_far < config.min_improvement:
            stale += 1
        else:
            stale = 0
        best_so_far = max(best_so_far, gen.best_fitness)
        if stale >= config.stagnation_patience:
            run.terminated_reason = Termination.STAGNATION
            return run
    run.terminated_reason = Termination.MAX_GENERATIONS
    return run


def select(rng: np.random.Generator, pool: Sequence[Individual], k: int) -> Individual:
    fit = [i.fitness for i in pool]
    return pool[tournament_select(rng, fit, min(k, len(pool)))]
