"""Genetic programming: warm-start search, traditional baseline and shared machinery."""

from wsgp.gp.baseline import (
    BaselineParams,
    SparsityReport,
    ramped_population,
    run_traditional_gp,
    sparsity_experiment,
    write_histogram_csv,
)
from wsgp.gp.engine import MIN_DATES_USED, FitnessCache, Generation, GpConfig, GpRun, Individual, Termination
from wsgp.gp.operators import (
    EmptyPopulation,
    NoMutablePoint,
    point_mutation,
    restricted_crossover,
    subtree_crossover,
    subtree_mutation,
    tournament_select,
    tournament_win_probabilities,
)
from wsgp.gp.warm_start import SeedEvaluationFailed, run_multi_seed, run_warm_start

__all__ = [
    "MIN_DATES_USED", "BaselineParams", "EmptyPopulation", "FitnessCache", "Generation", "GpConfig", "GpRun",
    "Individual", "NoMutablePoint", "SeedEvaluationFailed", "SparsityReport", "Termination",
    "point_mutation", "ramped_population", "restricted_crossover", "run_multi_seed",
    "run_traditional_gp", "run_warm_start", "sparsity_experiment", "subtree_crossover",
    "subtree_mutation", "tournament_select", "tournament_win_probabilities",
    "write_histogram_csv",
]
