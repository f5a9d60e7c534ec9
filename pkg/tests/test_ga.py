import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import planted_corr, random_instance
from mlclust import ga
from mlclust.errors import InvalidInputError
from mlclust.ga import (
    GaConfig,
    Population,
    TerminationReason,
    crossover_knowledge,
    evaluate_fitness,
    evolve,
    initialize_population,
    mutate,
    select_elite,
    select_sus,
    sus_indices,
)
from mlclust.likelihood import canonicalize, log_likelihood
from mlclust.oracle import brute_force_max
from mlclust.preprocess import sample_correlation
from mlclust.synth import training_set_40

SMALL = dict(population_size=60, max_generations=60, stall_generations=15, elite_size=4)


def is_canonical(row) -> bool:
    return np.array_equal(canonicalize(row), row)


class TestConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(population_size=1, elite_size=0),
            dict(population_size=10, elite_size=10),
            dict(p_crossover=1.5),
            dict(p_mutation=-0.1),
            dict(workers=0),
            dict(mutation_scope="chromosome"),
            dict(stall_generations=0),
        ],
    )
    def test_rejects(self, kwargs):
        with pytest.raises(InvalidInputError):
            GaConfig(**kwargs)

    def test_defaults(self):
        cfg = GaConfig()
        assert (cfg.population_size, cfg.max_generations, cfg.elite_size, cfg.stall_generations) == (1000, 400, 10, 50)
        assert (cfg.p_crossover, cfg.p_mutation, cfg.p_knowledge_crossover, cfg.error_tolerance) == (0.9, 0.1, 0.9, 1e-5)


class TestInitialize:
    def test_reproducible_and_canonical(self):
        cfg = GaConfig(population_size=4, elite_size=1, seed=3)
        a = initialize_population(cfg, 3)
        b = initialize_population(cfg, 3)
        assert np.array_equal(a.individuals, b.individuals)
        assert a.individuals.shape == (4, 3)
        assert all(is_canonical(r) for r in a.individuals)
        assert np.isnan(a.fitnesses).all()

    def test_single_asset_rejected(self):
        with pytest.raises(InvalidInputError):
            initialize_population(GaConfig(population_size=4, elite_size=1), 1)

    def test_raw_labels_uniform(self):
        draws = ga._draw_labels(np.random.default_rng(0), 100_000, 10)
        counts = np.bincount(draws, minlength=11)[1:]
        sigma = np.sqrt(100_000 * 0.1 * 0.9)
        assert np.all(np.abs(counts - 10_000) < 3 * sigma)

    def test_co_membership_rate(self):
        # canonicalization preserves grouping, so two assets share a label with probability 1/n
        pop = initialize_population(GaConfig(population_size=20_000, elite_size=1, seed=1), 10)
        same = (pop.individuals[:, 3] == pop.individuals[:, 7]).mean()
        assert abs(same - 0.1) < 3 * np.sqrt(0.1 * 0.9 / 20_000)


class TestEvaluate:
    def test_singletons_zero(self, rng):
        c = random_instance(rng, 6)
        pop = Population(np.tile(np.arange(1, 7), (5, 1)), np.full(5, np.nan))
        out = evaluate_fitness(pop, c)
        assert np.all(out.fitnesses == 0.0)

    def test_worker_count_irrelevant(self, rng):
        c = random_instance(rng, 12)
        pop = initialize_population(GaConfig(population_size=257, elite_size=1), 12)
        f1 = evaluate_fitness(pop, c, workers=1).fitnesses
        f8 = evaluate_fitness(pop, c, workers=8).fitnesses
        assert f1.tobytes() == f8.tobytes()
        assert np.allclose(f1, [log_likelihood(p, c) for p in pop.individuals], rtol=0, atol=1e-12)

    def test_planted_individual_is_fittest(self, rng):
        c, truth = planted_corr([4, 4], 0.7)
        assert np.array_equal(brute_force_max(c).best_partition, truth)
        pop = initialize_population(GaConfig(population_size=100, elite_size=1, seed=5), 8)
        pop.individuals[17] = truth
        f = evaluate_fitness(pop, c).fitnesses
        others = np.delete(f, 17)
        assert f[17] > others.max()


class TestSus:
    def test_all_mass_on_one(self, rng):
        assert set(sus_indices(np.array([0.0, 5.0, 0.0]), 10, rng)) == {1}

    def test_equal_fitness_each_once(self, rng):
        assert sorted(sus_indices(np.ones(4), 4, rng)) == [0, 1, 2, 3]

    def test_three_to_one(self, rng):
        for _ in range(50):
            idx = sus_indices(np.array([3.0, 1.0]), 4, rng)
            assert np.bincount(idx, minlength=2).tolist() == [3, 1]

    def test_zero_total_is_uniform(self, rng):
        idx = sus_indices(np.zeros(5), 50_000, rng)
        assert np.all(np.abs(np.bincount(idx, minlength=5) / 50_000 - 0.2) < 0.01)

    def test_count_must_be_positive(self, rng):
        with pytest.raises(InvalidInputError):
            sus_indices(np.ones(3), 0, rng)

    def test_select_requires_evaluation(self, rng):
        pop = initialize_population(GaConfig(population_size=4, elite_size=1), 3)
        with pytest.raises(InvalidInputError):
            select_sus(pop, 2, rng)

    @settings(max_examples=200, deadline=None)
    @given(
        st.lists(st.floats(0, 10, allow_nan=False), min_size=1, max_size=30).filter(lambda f: sum(f) > 1e-6),
        st.integers(1, 60),
        st.integers(0, 2**32 - 1),
    )
    def test_copies_within_one_of_expectation(self, f, count, seed):
        f = np.array(f)
        idx = sus_indices(f, count, np.random.default_rng(seed))
        copies = np.bincount(idx, minlength=f.size)
        expected = count * f / f.sum()
        assert np.all(copies >= np.floor(expected - 1e-9)) and np.all(copies <= np.ceil(expected + 1e-9))


class TestElite:
    def test_unique_top(self):
        ind = np.array([[1, 1], [1, 1], [1, 2], [1, 2]])
        f = np.array([2.0, 2.0, 1.0, 1.0])
        assert select_elite(ind, f, 2).tolist() == [0, 2]

    def test_duplicates_fill_when_short(self):
        ind = np.array([[1, 1], [1, 1], [1, 1]])
        assert select_elite(ind, np.array([1.0, 1.0, 1.0]), 2).tolist() == [0, 1]


class TestCrossover:
    @pytest.mark.parametrize("p_kb", [0.0, 1.0])
    def test_identical_parents(self, p_kb, rng):
        c = random_instance(rng, 8)
        p = canonicalize(rng.integers(1, 9, 8))
        a, b = crossover_knowledge(p, p, c, p_kb, rng)
        assert np.array_equal(a, p) and np.array_equal(b, p)

    def test_one_point_reduction(self, rng):
        c = np.eye(6)
        pa = np.array([1, 1, 2, 2, 3, 3])
        pb = np.array([1, 2, 3, 4, 5, 6])
        a, b = crossover_knowledge(pa, pb, c, 0.0, rng, cut=3)
        assert a.tolist() == canonicalize([1, 1, 2, 4, 5, 6]).tolist()
        assert b.tolist() == canonicalize([1, 2, 3, 2, 3, 3]).tolist()

    def test_transplant_moves_best_cluster(self, rng):
        c, _ = planted_corr([3, 3], 0.9)
        pa = np.arange(1, 7)
        pb = np.array([1, 1, 1, 2, 3, 4])
        a, _ = crossover_knowledge(pa, pb, c, 1.0, rng)
        assert a[0] == a[1] == a[2]

    def test_transplant_baseline_on_training_set(self):
        panel, truth = training_set_40()
        c = sample_correlation(panel)
        rng = np.random.default_rng(0)
        ok = 0
        for _ in range(1000):
            parents = []
            for _ in range(2):
                p = truth.copy()
                idx = rng.choice(40, 8, replace=False)
                p[idx] = rng.integers(1, 41, 8)
                parents.append(p)
            a, b = crossover_knowledge(parents[0], parents[1], c, 1.0, rng)
            floor = min(log_likelihood(p, c) for p in parents)
            ok += log_likelihood(a, c) >= floor and log_likelihood(b, c) >= floor
        assert ok >= 800


class TestMutate:
    def test_zero_rate_identity(self, rng):
        p = canonicalize(rng.integers(1, 11, 10))
        assert np.array_equal(mutate(p, 0.0, rng), p)

    def test_full_rate_one_cluster(self, rng):
        n, trials = 10, 10_000
        changed = np.array([mutate(np.ones(n, dtype=int), 1.0, rng) for _ in range(trials)])
        assert np.all(changed[:, 0] == 1)
        frac = (changed[:, 1:] != 1).mean()
        assert abs(frac - (n - 1) / n) < 0.01

    def test_gene_rate_binomial_mean(self):
        mask = ga._mutation_mask(np.random.default_rng(0), (10_000, 18), 0.1, "gene")
        assert abs(mask.sum(axis=1).mean() - 1.8) < 0.05

    def test_offspring_scope_one_gene(self):
        mask = ga._mutation_mask(np.random.default_rng(0), (10_000, 18), 0.1, "offspring")
        per_row = mask.sum(axis=1)
        assert set(per_row.tolist()) <= {0, 1}
        assert abs(per_row.mean() - 0.1) < 0.01

    def test_bad_scope(self, rng):
        with pytest.raises(InvalidInputError):
            mutate([1, 1], 0.5, rng, scope="all")

    @settings(max_examples=80, deadline=None)
    @given(st.lists(st.integers(1, 9), min_size=2, max_size=9), st.floats(0, 1), st.integers(0, 2**32 - 1))
    def test_output_valid(self, labels, p_m, seed):
        labels = [min(x, len(labels)) for x in labels]
        out = mutate(labels, p_m, np.random.default_rng(seed))
        assert is_canonical(out) and out.min() >= 1 and out.max() <= len(labels)


class TestEvolve:
    def test_identity_stalls_at_zero(self):
        res = evolve(np.eye(6), GaConfig(**SMALL))
        assert res.termination_reason is TerminationReason.STALLED
        assert res.best_fitness == 0.0
        assert res.best_partition.tolist() == [1, 2, 3, 4, 5, 6]

    def test_generation_cap(self, rng):
        c = random_instance(rng, 10)
        res = evolve(c, GaConfig(population_size=20, elite_size=2, max_generations=3, stall_generations=50))
        assert res.termination_reason is TerminationReason.MAX_GENERATIONS
        assert res.generations_run == 3 and res.fitness_history.shape == (3, 3)

    def test_target_fitness(self):
        c, truth = planted_corr([4, 4], 0.7)
        target = log_likelihood(truth, c)
        res = evolve(c, GaConfig(**SMALL, target_fitness=target))
        assert res.termination_reason is TerminationReason.CONVERGED
        assert np.array_equal(res.best_partition, truth)

    def test_invariants_through_run(self, rng):
        c = random_instance(rng, 10)
        seen = []

        def watch(pop):
            assert pop.size == SMALL["population_size"]
            assert all(is_canonical(r) for r in pop.individuals)
            assert np.allclose(pop.fitnesses, [log_likelihood(r, c) for r in pop.individuals], atol=1e-12)
            seen.append(pop.best[1])

        res = evolve(c, GaConfig(**SMALL), callback=watch)
        assert all(b >= a for a, b in zip(seen, seen[1:]))
        assert np.all(np.diff(res.fitness_history[:, 0]) >= 0)
        assert len(seen) == res.generations_run

    def test_stall_length(self):
        res = evolve(np.eye(5), GaConfig(**SMALL))
        # the best never moves, so the run is the first generation plus the stall window
        assert res.generations_run == 1 + SMALL["stall_generations"]

    def test_deterministic_across_workers(self, rng):
        c = random_instance(rng, 12)
        runs = [evolve(c, GaConfig(**SMALL, seed=9, workers=w)) for w in (1, 3)]
        assert runs[0].identical(runs[1])

    def test_n8_matches_brute_force(self):
        rng = np.random.default_rng(2024)
        c = random_instance(rng, 8)
        best = brute_force_max(c).best_fitness
        hits = 0
        for seed in range(20):
            res = evolve(c, GaConfig(population_size=200, elite_size=5, seed=seed))
            assert res.best_fitness <= best + 1e-9
            hits += abs(res.best_fitness - best) <= 1e-9
        assert hits >= 18
