"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the lines are repeated in an
"acceptance criteria" section at the end of the session.
"""

import os
import statistics
import time

import mpmath
import numpy as np
import pytest

from helpers import random_instance, sampled_block_corr, spanning_tree_min_weight
from mlclust.ga import FitnessEvaluator, GaConfig, default_workers, evolve, initialize_population
from mlclust.likelihood import log_likelihood
from mlclust.mst import build_forest
from mlclust.oracle import brute_force_max, simulated_annealing
from mlclust.preprocess import rmt_clean, sample_correlation
from mlclust.synth import PlantedSpec, generate_noh, training_set_40

pytestmark = pytest.mark.slow

TOL = 1e-9


def workers() -> int:
    return default_workers()


def test_planted_cluster_recovery(verdict):
    panel, truth = training_set_40()
    c = sample_correlation(panel)
    t0 = time.perf_counter()
    results = [evolve(c, GaConfig(seed=s, workers=workers())) for s in range(20)]
    elapsed = time.perf_counter() - t0
    hits = sum(np.array_equal(r.best_partition, truth) for r in results)
    within = all(r.generations_run <= 400 for r in results)
    ok = hits >= 19 and within
    verdict(
        "1 planted-cluster recovery",
        ok,
        f"{hits}/20 exact recoveries (need >= 19), max generations {max(r.generations_run for r in results)}, "
        f"{elapsed:.1f} s total",
    )
    assert ok


def test_oracle_equivalence(verdict):
    rng = np.random.default_rng(777)
    sizes = [6, 8, 10] * 17
    equal, exceed, worst = 0, 0, 0.0
    for k, n in enumerate(sizes[:50]):
        c = random_instance(rng, n)
        best = brute_force_max(c).best_fitness
        got = evolve(c, GaConfig(seed=k, workers=workers())).best_fitness
        equal += abs(got - best) <= TOL
        exceed += got > best + TOL
        worst = max(worst, got - best)
    ok = equal >= 45 and exceed == 0
    verdict(
        "2 oracle equivalence",
        ok,
        f"GA == brute force on {equal}/50 (need >= 45), exceeded optimum {exceed} times (max excess {worst:.2e})",
    )
    assert ok


def _pair():
    c = np.eye(2)
    c[0, 1] = c[1, 0] = 0.5
    return c


def _triple():
    c = np.full((3, 3), 0.9)
    np.fill_diagonal(c, 1.0)
    return c


def _independent_values():
    mpmath.mp.dps = 30
    pair = mpmath.log(mpmath.mpf(4) / 3) / 2
    triple = (mpmath.log(mpmath.mpf(3) / mpmath.mpf("8.4")) + 2 * mpmath.log(mpmath.mpf(6) / mpmath.mpf("0.6"))) / 2
    return float(pair), float(triple)


# expected values frozen after the independent evaluation above
PAIR_EXPECTED = 0.143841
TRIPLE_EXPECTED = 1.787775


def test_likelihood_unit_values(verdict):
    pair_ref, triple_ref = _independent_values()
    confirmed = abs(pair_ref - PAIR_EXPECTED) < 1e-6 and abs(triple_ref - TRIPLE_EXPECTED) < 1e-6
    pair = log_likelihood([1, 1], _pair())
    triple = log_likelihood([1, 1, 1], _triple())
    rng = np.random.default_rng(0)
    x = rng.standard_normal((7, 30))
    c = 0.5 * (np.corrcoef(x) + np.corrcoef(x).T)
    np.fill_diagonal(c, 1.0)
    zeros = (
        log_likelihood(np.arange(1, 8), c) == 0.0
        and all(log_likelihood(rng.integers(1, 8, 7), np.eye(7)) == 0.0 for _ in range(100))
    )
    ok = confirmed and abs(pair - PAIR_EXPECTED) < 1e-6 and abs(triple - TRIPLE_EXPECTED) < 1e-6 and zeros
    verdict(
        "3 likelihood unit values",
        ok,
        f"pair {pair:.9f} (expect {PAIR_EXPECTED}), triple {triple:.9f} (expect {TRIPLE_EXPECTED}), "
        f"independent check {pair_ref:.9f}/{triple_ref:.9f}, singleton/identity zeros exact: {zeros}",
    )
    assert ok


@pytest.mark.xfail(strict=True, reason="the listed 1.787780 disagrees with direct evaluation (1.7877754) by 4.6e-6")
def test_likelihood_triple_literal_listing(verdict):
    triple = log_likelihood([1, 1, 1], _triple())
    ok = abs(triple - 1.787780) < 1e-6
    verdict("3 (listed triple 1.787780, informational)", ok, f"computed {triple:.9f}, |diff| = {abs(triple - 1.787780):.2e}")
    assert ok


def test_determinism_across_workers(verdict):
    rng = np.random.default_rng(5)
    panel, _ = training_set_40()
    cases = [sample_correlation(panel), random_instance(rng, 18)]
    ok = True
    for c in cases:
        runs = [evolve(c, GaConfig(seed=42, workers=w)) for w in (1, 2, 8)]
        ok &= all(runs[0].identical(r) for r in runs[1:])
    verdict("4 determinism across workers", ok, "GaResult bit-identical for workers 1, 2, 8 on 2 matrices" if ok else "mismatch")
    assert ok


def _eighteen_asset_matrix(seed: int) -> np.ndarray:
    spec = PlantedSpec(n=18, d=500, clusters=((6, 0.8), (5, 0.7), (4, 0.6), (3, 0.5)), seed=seed, shuffle=True)
    return sample_correlation(generate_noh(spec)[0])


def _evaluate_time(evaluator, individuals, reps: int = 15) -> float:
    evaluator(individuals)  # warm the pool and compiled kernel
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        evaluator(individuals)
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def test_timing_shape(verdict):
    cores = len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count()
    c18 = _eighteen_asset_matrix(0)
    evolve(c18, GaConfig(seed=0, workers=workers(), max_generations=2))  # compile outside the timed loop
    times = []
    for s in range(50):
        c = _eighteen_asset_matrix(s)
        t0 = time.perf_counter()
        evolve(c, GaConfig(seed=s, workers=workers()))
        times.append(time.perf_counter() - t0)
    median = statistics.median(times)

    rng = np.random.default_rng(1)
    c100 = random_instance(rng, 100)
    pop = initialize_population(GaConfig(seed=3), 100).individuals
    with FitnessEvaluator(c100, 1) as one, FitnessEvaluator(c100, 4) as four:
        t1 = _evaluate_time(one, pop)
        t4 = _evaluate_time(four, pop)
    speedup = t1 / t4
    ok = median < 2.0 and speedup >= 2.0
    verdict(
        "5 timing shape",
        ok,
        f"18-asset median {median:.3f} s over 50 runs (need < 2 s); evaluate_fitness speedup 4 vs 1 workers "
        f"{speedup:.2f}x (need >= 2x; {t1 * 1e3:.2f} ms vs {t4 * 1e3:.2f} ms); {cores} usable core(s)",
    )
    assert ok


def test_rmt_cleaning_benefit(verdict):
    rng = np.random.default_rng(2014)
    wins = 0
    for _ in range(20):
        c, labels = sampled_block_corr(rng, [5, 5], 0.8, 100)
        wins += log_likelihood(labels, rmt_clean(c, 10 / 100)) >= log_likelihood(labels, c)
    ok = wins >= 16
    verdict("6 RMT cleaning benefit", ok, f"planted L_c not decreased in {wins}/20 instances (need >= 16)")
    assert ok


def test_mst_correctness(verdict):
    rng = np.random.default_rng(99)
    checked, bad_weight, bad_count = 0, 0, 0
    for _ in range(100):
        sizes = []
        while sum(sizes) < 12:
            sizes.append(int(rng.integers(1, 9)))
        n = sum(sizes)
        labels = np.repeat(np.arange(1, len(sizes) + 1), sizes)[rng.permutation(n)]
        x = rng.standard_normal((n, 30)) + rng.standard_normal(30) * rng.uniform(0, 1)
        c = 0.5 * (np.corrcoef(x) + np.corrcoef(x).T)
        np.fill_diagonal(c, 1.0)
        forest = build_forest(labels, c)
        for tree in forest.trees:
            bad_count += len(tree.edges) != len(tree.members) - 1
            if len(tree.members) > 1:
                sub = c[np.ix_(tree.members, tree.members)]
                best = spanning_tree_min_weight(np.sqrt(np.maximum(2 * (1 - sub), 0)))
                bad_weight += abs(tree.total_weight - best) > 1e-12
                checked += 1
    ok = bad_weight == 0 and bad_count == 0
    verdict(
        "7 MST correctness",
        ok,
        f"{checked} clusters (n_s <= 8) across 100 instances: {bad_weight} weight mismatches, {bad_count} edge-count errors",
    )
    assert ok


def test_sa_and_ga_parity(verdict):
    rng = np.random.default_rng(8)
    sa_hits = ga_hits = 0
    for k in range(50):
        c = random_instance(rng, 8)
        best = brute_force_max(c).best_fitness
        sa = simulated_annealing(c, seed=k).best_fitness
        ga = evolve(c, GaConfig(seed=k, workers=workers())).best_fitness
        assert sa <= best + TOL and ga <= best + TOL
        sa_hits += abs(sa - best) <= TOL
        ga_hits += abs(ga - best) <= TOL
    ok = sa_hits >= 45 and ga_hits >= 45
    verdict("8 SA baseline parity", ok, f"N=8: SA optimal on {sa_hits}/50, GA optimal on {ga_hits}/50 (need >= 45 each)")
    assert ok
