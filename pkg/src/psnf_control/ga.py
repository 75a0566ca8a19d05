"""Real-valued genetic algorithm for duty-cycle sequences.

Individuals are vectors of duty-cycles in [0, 1]; lower fitness is better.
Randomness comes from a Philox counter-based generator so a given
``(seed, key)`` always yields the same stream. The order in which random
numbers are drawn is part of the contract: initialisation, then per
generation the tournaments, crossover and mutation draws for each pair in
turn.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


def make_rng(seed: int, *key: int) -> np.random.Generator:
    """Philox generator for ``seed`` and an optional integer stream key."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class GaConfig:
    population_size: int = 20
    tournament_size: int = 4
    crossover_prob: float = 0.5
    mutation_prob: float = 0.1
    mutation_sigma: float = 0.05
    generations: int = 50
    stall_limit: int = 10
    stall_tol: float = 1e-12
    lower: float = 0.0
    upper: float = 1.0
    init_sigma: float = 0.05
    # half-width of the first-gene perturbation, as a fraction of the previous duty
    first_gene_halfwidth: float = 0.5

    def __post_init__(self):
        if self.population_size < 2:
            raise ValueError("population_size must be >= 2")
        if not 1 <= self.tournament_size <= self.population_size:
            raise ValueError("tournament_size must be in [1, population_size]")
        for name in ("crossover_prob", "mutation_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.generations < 1 or self.stall_limit < 1:
            raise ValueError("generations and stall_limit must be >= 1")
        if not self.lower < self.upper:
            raise ValueError("gene bounds must satisfy lower < upper")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class Individual:
    genes: np.ndarray
    fitness: float


@dataclass
class GaResult:
    best: Individual
    generations: int
    history: list[tuple[int, float, float]] = field(default_factory=list)

    def log_csv(self) -> str:
        lines = ["generation,best_cost,mean_cost"]
        lines += [f"{g},{b!r},{m!r}" for g, b, m in self.history]
        return "\n".join(lines) + "\n"


Objective = Callable[[np.ndarray], np.ndarray]


def initialize_population(
    cfg: GaConfig, n_genes: int, previous_duty: float, rng: np.random.Generator
) -> np.ndarray:
    """First gene perturbs the previous duty uniformly; the rest scatter around it."""
    n = cfg.population_size
    half = cfg.first_gene_halfwidth * previous_duty
    first = np.clip(previous_duty + rng.uniform(-half, half, size=n), cfg.lower, cfg.upper)
    pop = np.empty((n, n_genes))
    pop[:, 0] = first
    if n_genes > 1:
        rest = rng.normal(first[:, None], cfg.init_sigma, size=(n, n_genes - 1))
        pop[:, 1:] = np.clip(rest, cfg.lower, cfg.upper)
    return pop


def _tournament(fitness: np.ndarray, k: int, rng: np.random.Generator) -> int:
    entrants = rng.choice(fitness.shape[0], size=k, replace=False)
    # lowest cost wins; ties go to the lowest population index
    return int(min(entrants, key=lambda i: (fitness[i], i)))


def _evaluate(objective: Objective, pop: np.ndarray, fitness: np.ndarray) -> None:
    todo = np.flatnonzero(np.isnan(fitness))
    if todo.size:
        values = np.asarray(objective(pop[todo]), dtype=float).reshape(-1)
        if values.shape[0] != todo.size:
            raise RuntimeError("objective returned wrong number of costs")
        fitness[todo] = values


def vectorize(scalar_objective: Callable[[np.ndarray], float]) -> Objective:
    """Adapt a per-individual objective to the batch interface."""
    return lambda pop: np.array([scalar_objective(row) for row in pop])


def evolve(
    cfg: GaConfig,
    objective: Objective,
    n_genes: int,
    previous_duty: float,
    rng: np.random.Generator | int,
    on_generation: Callable[[int, np.ndarray, np.ndarray], None] | None = None,
) -> GaResult:
    """Minimise ``objective`` over duty sequences of length ``n_genes``.

    ``objective`` maps an ``(m, n_genes)`` array to ``m`` costs. Individuals
    carried over unchanged keep their cached cost, so it should be
    deterministic. ``on_generation(gen, population, costs)`` is called after
    every evaluation, for logging or inspection.
    """
    if not isinstance(rng, np.random.Generator):
        rng = make_rng(rng)
    n = cfg.population_size
    pop = initialize_population(cfg, n_genes, previous_duty, rng)
    fitness = np.full(n, np.nan)
    _evaluate(objective, pop, fitness)
    if on_generation is not None:
        on_generation(1, pop, fitness)

    i_best = int(np.argmin(fitness))
    best_genes, best_fit = pop[i_best].copy(), float(fitness[i_best])
    history = [(1, best_fit, float(np.mean(fitness)))]
    stall = 0
    generation = 1
    while generation < cfg.generations and stall < cfg.stall_limit:
        generation += 1
        new_pop = [best_genes.copy()]
        new_fit = [best_fit]
        while len(new_pop) < n:
            i = _tournament(fitness, cfg.tournament_size, rng)
            j = _tournament(fitness, cfg.tournament_size, rng)
            if rng.random() < cfg.crossover_prob:
                child = 0.5 * (pop[i] + pop[j])
                offspring = [(child, np.nan), (child.copy(), np.nan)]
            else:
                offspring = [(pop[i].copy(), fitness[i]), (pop[j].copy(), fitness[j])]
            for genes, fit in offspring:
                if rng.random() < cfg.mutation_prob:
                    genes = np.clip(
                        genes + rng.normal(0.0, cfg.mutation_sigma, size=n_genes),
                        cfg.lower,
                        cfg.upper,
                    )
                    fit = np.nan
                if len(new_pop) < n:
                    new_pop.append(genes)
                    new_fit.append(fit)
        pop = np.array(new_pop)
        fitness = np.array(new_fit, dtype=float)
        _evaluate(objective, pop, fitness)
        if on_generation is not None:
            on_generation(generation, pop, fitness)

        i_gen = int(np.argmin(fitness))
        if fitness[i_gen] < best_fit - cfg.stall_tol:
            stall = 0
        else:
            stall += 1
        if fitness[i_gen] < best_fit:
            best_genes, best_fit = pop[i_gen].copy(), float(fitness[i_gen])
        history.append((generation, best_fit, float(np.mean(fitness))))

    return GaResult(Individual(best_genes, best_fit), generation, history)

