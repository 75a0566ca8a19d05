import numpy as np
import pytest

from psnf_control.ga import (
    GaConfig,
    GaResult,
    evolve,
    initialize_population,
    make_rng,
    vectorize,
)

CFG = GaConfig()


def _sum_cost(pop):
    return pop.sum(axis=1)


class TestConfig:
    def test_defaults(self):
        assert (CFG.population_size, CFG.tournament_size) == (20, 4)
        assert (CFG.crossover_prob, CFG.mutation_prob, CFG.mutation_sigma) == (0.5, 0.1, 0.05)
        assert (CFG.generations, CFG.stall_limit) == (50, 10)

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(population_size=1),
            dict(tournament_size=21),
            dict(crossover_prob=1.5),
            dict(mutation_prob=-0.1),
            dict(generations=0),
            dict(lower=1.0, upper=0.0),
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            GaConfig(**kwargs)


class TestInitialization:
    def test_zero_previous_duty(self):
        pop = initialize_population(CFG, 4, 0.0, make_rng(3))
        assert pop.shape == (20, 4)
        assert np.all(pop[:, 0] == 0.0)
        assert np.all((pop >= 0.0) & (pop <= 1.0))
        assert np.any(pop[:, 1:] > 0.0)

    def test_first_gene_interval(self):
        pop = initialize_population(CFG, 5, 0.4, make_rng(11))
        assert np.all((pop[:, 0] >= 0.2) & (pop[:, 0] <= 0.6))

    def test_later_genes_scatter_around_first(self):
        pop = initialize_population(CFG, 200, 0.5, make_rng(5))
        spread = pop[:, 1:] - pop[:, :1]
        assert abs(np.std(spread) - 0.05) < 0.005

    def test_deterministic(self):
        a = initialize_population(CFG, 5, 0.3, make_rng(9, 1, 2))
        b = initialize_population(CFG, 5, 0.3, make_rng(9, 1, 2))
        assert np.array_equal(a, b)

    def test_streams_differ(self):
        a = initialize_population(CFG, 5, 0.3, make_rng(9, 1, 2))
        b = initialize_population(CFG, 5, 0.3, make_rng(9, 1, 3))
        assert not np.array_equal(a, b)


class TestEvolve:
    def test_sum_objective(self):
        res = evolve(CFG, _sum_cost, 3, 0.3, 1)
        assert res.best.fitness <= 0.05
        assert res.best.fitness == pytest.approx(res.best.genes.sum())

    def test_constant_objective_stalls(self):
        res = evolve(CFG, lambda pop: np.full(pop.shape[0], 2.5), 3, 0.3, 0)
        assert res.best.fitness == 2.5
        assert res.generations == CFG.stall_limit + 1

    def test_quadratic_bowl(self):
        res = evolve(CFG, lambda pop: (pop[:, 0] - 0.31) ** 2, 1, 0.31, 7)
        assert abs(res.best.genes[0] - 0.31) <= 0.02

    def test_generation_cap(self):
        calls = []
        cfg = GaConfig(generations=5, stall_limit=100)
        res = evolve(cfg, _sum_cost, 2, 0.5, 4, on_generation=lambda g, p, f: calls.append(g))
        assert res.generations == 5 and calls == [1, 2, 3, 4, 5]

    def test_deterministic(self):
        a = evolve(CFG, _sum_cost, 3, 0.3, 21)
        b = evolve(CFG, _sum_cost, 3, 0.3, 21)
        assert np.array_equal(a.best.genes, b.best.genes)
        assert a.log_csv() == b.log_csv()

    def test_seed_or_generator(self):
        a = evolve(CFG, _sum_cost, 3, 0.3, 21)
        b = evolve(CFG, _sum_cost, 3, 0.3, make_rng(21))
        assert np.array_equal(a.best.genes, b.best.genes)

    def test_scaled_objective_same_argmin(self):
        a = evolve(CFG, lambda p: (p[:, 0] - 0.4) ** 2 + p[:, 1], 2, 0.3, 8)
        b = evolve(CFG, lambda p: 7.5 * ((p[:, 0] - 0.4) ** 2 + p[:, 1]), 2, 0.3, 8)
        assert np.array_equal(a.best.genes, b.best.genes)

    def test_cached_costs_not_reevaluated(self):
        evaluated = []

        def cost(pop):
            evaluated.append(pop.shape[0])
            return pop.sum(axis=1)

        res = evolve(CFG, cost, 3, 0.3, 2)
        assert evaluated[0] == CFG.population_size
        # the elite and unmodified copies keep their cost
        assert all(n < CFG.population_size for n in evaluated[1:])
        assert len(evaluated) == res.generations

    def test_vectorize(self):
        a = evolve(CFG, vectorize(lambda g: float(np.sum(g))), 3, 0.3, 1)
        b = evolve(CFG, _sum_cost, 3, 0.3, 1)
        assert np.array_equal(a.best.genes, b.best.genes)

    def test_wrong_cost_count(self):
        with pytest.raises(RuntimeError):
            evolve(CFG, lambda pop: np.zeros(1), 3, 0.3, 1)

    def test_log_csv(self):
        res = evolve(GaConfig(generations=3, stall_limit=10), _sum_cost, 2, 0.3, 1)
        lines = res.log_csv().splitlines()
        assert lines[0] == "generation,best_cost,mean_cost"
        assert [int(l.split(",")[0]) for l in lines[1:]] == [1, 2, 3]
        assert isinstance(res, GaResult)


def test_monotone_best_and_bounds_over_seeds():
    """Best-so-far never increases and genes never leave [0, 1], over 100 seeds."""
    for seed in range(100):
        rng = np.random.default_rng(seed)
        target = rng.uniform(-0.2, 1.2, size=4)

        def cost(pop, target=target):
            return np.sum((pop - target) ** 2, axis=1)

        seen = []

        def check(gen, pop, fit):
            assert np.all((pop >= 0.0) & (pop <= 1.0))
            assert np.all(np.isfinite(fit))
            seen.append(float(np.min(fit)))

        res = evolve(CFG, cost, 4, float(rng.uniform()), seed, on_generation=check)
        best = [b for _, b, _ in res.history]
        assert np.all(np.diff(best) <= 0.0)
        # elitism: each generation's minimum is the best so far
        assert seen == best
        assert res.best.fitness == best[-1]
