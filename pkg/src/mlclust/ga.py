"""Synchronous master-slave genetic algorithm over set partitions.

The master owns the population and applies every genetic operator; only
fitness evaluation is farmed out. Each generation the population is split
into contiguous chunks, one per worker thread, and the master blocks until
every chunk has reported back before selection starts. Fitness kernels are
pure and release the GIL, so the fitness vector is bit-identical for any
worker count, and all random draws come from one master stream in a fixed
order, so the whole run is too.

Individuals are integer label vectors (gene ``i`` is the cluster of asset
``i``) kept in canonical first-occurrence form.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable

import numpy as np
from numba import njit

from .errors import InvalidInputError
from .likelihood import (
    _best_cluster,
    _canonicalize_rows,
    _loglik_rows,
    _term,
    as_correlation,
    as_partition,
    dissolve_null_clusters,
)

__all__ = [
    "FitnessEvaluator",
    "GaConfig",
    "GaResult",
    "HISTORY_COLUMNS",
    "Population",
    "TerminationReason",
    "crossover_knowledge",
    "evaluate_fitness",
    "evolve",
    "initialize_population",
    "mutate",
    "scale_fitness",
    "select_elite",
    "select_sus",
    "sus_indices",
]

HISTORY_COLUMNS = ("best", "mean", "std")
MUTATION_SCOPES = ("offspring", "gene")


@dataclass(frozen=True)
class GaConfig:
    """Adjoint parameters of the GA. Defaults are the tuned training-set values."""

    population_size: int = 1000
    max_generations: int = 400
    p_crossover: float = 0.9
    p_mutation: float = 0.1
    error_tolerance: float = 1e-5
    stall_generations: int = 50
    elite_size: int = 10
    p_knowledge_crossover: float = 0.9
    seed: int = 0
    workers: int = 1
    # "offspring": p_mutation is the chance an offspring is mutated (one gene redrawn);
    # "gene": every gene is redrawn independently with probability p_mutation
    mutation_scope: str = "offspring"
    # stop early once the best fitness reaches this value (within error_tolerance)
    target_fitness: float | None = None

    def __post_init__(self):
        if self.population_size < 2:
            raise InvalidInputError("population_size must be at least 2")
        if not 0 <= self.elite_size < self.population_size:
            raise InvalidInputError("elite_size must satisfy 0 <= elite_size < population_size")
        for name in ("p_crossover", "p_mutation", "p_knowledge_crossover"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidInputError(f"{name} must lie in [0, 1], got {v}")
        if self.max_generations < 1:
            raise InvalidInputError("max_generations must be at least 1")
        if self.stall_generations < 1:
            raise InvalidInputError("stall_generations must be at least 1")
        if self.error_tolerance < 0:
            raise InvalidInputError("error_tolerance must be non-negative")
        if self.workers < 1:
            raise InvalidInputError("workers must be at least 1")
        if self.mutation_scope not in MUTATION_SCOPES:
            raise InvalidInputError(f"mutation_scope must be one of {MUTATION_SCOPES}")
        if not 0 <= self.seed < 2**64:
            raise InvalidInputError("seed must be a 64-bit unsigned integer")


class TerminationReason(str, Enum):
    MAX_GENERATIONS = "max_generations"
    STALLED = "stalled"
    CONVERGED = "converged"


@dataclass
class Population:
    individuals: np.ndarray  # (population_size, n) int64, canonical rows
    fitnesses: np.ndarray  # (population_size,) float64; NaN until evaluated
    generation: int = 0
    best: tuple[np.ndarray, float] | None = None
    stall_counter: int = 0

    @property
    def size(self) -> int:
        return self.individuals.shape[0]

    @property
    def evaluated(self) -> bool:
        return not np.isnan(self.fitnesses).any()

    def stats(self) -> tuple[float, float, float]:
        f = self.fitnesses
        return float(f.max()), float(f.mean()), float(f.std())


@dataclass(eq=False)
class GaResult:
    best_partition: np.ndarray
    best_fitness: float
    generations_run: int
    termination_reason: TerminationReason
    # one row per evaluated generation, columns HISTORY_COLUMNS
    fitness_history: np.ndarray = field(repr=False)

    def identical(self, other: "GaResult") -> bool:
        """Bit-for-bit equality of every field."""
        return (
            np.array_equal(self.best_partition, other.best_partition)
            and self.best_fitness == other.best_fitness
            and self.generations_run == other.generations_run
            and self.termination_reason == other.termination_reason
            and self.fitness_history.shape == other.fitness_history.shape
            and self.fitness_history.tobytes() == other.fitness_history.tobytes()
        )


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def _draw_labels(rng: np.random.Generator, shape, n: int) -> np.ndarray:
    return rng.integers(1, n + 1, size=shape, dtype=np.int64)


def _mutation_mask(rng: np.random.Generator, shape, p_m: float, scope: str) -> np.ndarray:
    rows, n = shape
    if scope == "gene":
        return rng.random(shape) < p_m
    hit = rng.random(rows) < p_m
    pos = rng.integers(0, n, size=rows)
    mask = np.zeros(shape, dtype=bool)
    mask[np.flatnonzero(hit), pos[hit]] = True
    return mask


# ---------------------------------------------------------------------------
# fitness evaluation (the slaves)
# ---------------------------------------------------------------------------


class FitnessEvaluator:
    """Evaluates a population on a pool of worker threads.

    Use as a context manager so the pool is reused across generations::

        with FitnessEvaluator(corr, workers=4) as evaluate:
            fitness = evaluate(labels)
    """

    def __init__(self, corr, workers: int = 1):
        if workers < 1:
            raise InvalidInputError("workers must be at least 1")
        self.corr = np.ascontiguousarray(corr, dtype=np.float64)
        self.workers = workers
        self._pool = ThreadPoolExecutor(workers, thread_name_prefix="fitness") if workers > 1 else None

    def __call__(self, individuals: np.ndarray) -> np.ndarray:
        labels = np.ascontiguousarray(individuals, dtype=np.int64)
        if labels.ndim != 2 or labels.shape[1] != self.corr.shape[0]:
            raise InvalidInputError(
                f"population shape {labels.shape} does not match {self.corr.shape[0]} assets"
            )
        size = labels.shape[0]
        out = np.empty(size, dtype=np.float64)
        if self._pool is None or size < 2:
            _loglik_rows(labels, self.corr, out, 0, size)
            return out
        bounds = np.linspace(0, size, self.workers + 1).astype(np.int64)
        futures = [
            self._pool.submit(_loglik_rows, labels, self.corr, out, int(lo), int(hi))
            for lo, hi in zip(bounds[:-1], bounds[1:])
            if hi > lo
        ]
        # synchronous barrier: nothing proceeds until every chunk is back
        for fut in futures:
            fut.result()
        return out

    def close(self):
        if self._pool is not None:
            self._pool.shutdown(wait=True)
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def evaluate_fitness(pop: Population, c, workers: int = 1) -> Population:
    """Return ``pop`` with every fitness computed and best/stall bookkeeping refreshed."""
    with FitnessEvaluator(c, workers) as ev:
        fitnesses = ev(pop.individuals)
    i = int(np.argmax(fitnesses))
    best = pop.best
    if best is None or fitnesses[i] > best[1]:
        best = (pop.individuals[i].copy(), float(fitnesses[i]))
    return replace(pop, fitnesses=fitnesses, best=best)


# ---------------------------------------------------------------------------
# operators (the master)
# ---------------------------------------------------------------------------


def initialize_population(cfg: GaConfig, n: int, rng_seed=None) -> Population:
    """Uniform random labels in 1..n for every gene, canonicalized."""
    if n < 2:
        raise InvalidInputError(f"need at least 2 assets to cluster, got {n}")
    rng = _as_rng(cfg.seed if rng_seed is None else rng_seed)
    raw = _draw_labels(rng, (cfg.population_size, n), n)
    individuals = _canonicalize_rows(raw, n)
    return Population(individuals, np.full(cfg.population_size, np.nan))


def scale_fitness(fitnesses: np.ndarray) -> np.ndarray:
    """Shift fitness so the minimum is non-negative (identity for L_c >= 0)."""
    lo = fitnesses.min()
    if lo >= 0:
        return fitnesses
    return fitnesses - lo


def sus_indices(fitnesses, count: int, rng) -> np.ndarray:
    """Stochastic universal sampling: one spin, ``count`` equally spaced pointers.

    Falls back to uniform sampling when the total fitness is zero.
    """
    if count < 1:
        raise InvalidInputError("count must be at least 1")
    rng = _as_rng(rng)
    f = np.asarray(fitnesses, dtype=np.float64)
    if np.any(f < 0) or not np.all(np.isfinite(f)):
        raise InvalidInputError("SUS needs finite non-negative fitness values")
    total = float(f.sum())
    if total <= 0.0:
        return rng.integers(0, f.shape[0], size=count)
    spacing = total / count
    pointers = rng.uniform(0.0, spacing) + spacing * np.arange(count)
    idx = np.searchsorted(np.cumsum(f), pointers, side="right")
    return np.minimum(idx, f.shape[0] - 1)


def select_sus(pop: Population, count: int, rng) -> np.ndarray:
    """Parents chosen by SUS over scaled fitness; returns a (count, n) label array."""
    if not pop.evaluated:
        raise InvalidInputError("population has unevaluated individuals")
    idx = sus_indices(scale_fitness(pop.fitnesses), count, rng)
    return pop.individuals[idx].copy()


def select_elite(individuals: np.ndarray, fitnesses: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` fittest distinct individuals.

    Ties in fitness go to the lower index. Duplicates are used only when the
    population holds fewer than ``k`` distinct partitions.
    """
    if k == 0:
        return np.empty(0, dtype=np.int64)
    order = np.lexsort((np.arange(fitnesses.shape[0]), -fitnesses))
    chosen, dupes, seen = [], [], set()
    for i in order:
        key = individuals[i].tobytes()
        if key in seen:
            if len(dupes) < k:
                dupes.append(i)
            continue
        seen.add(key)
        chosen.append(i)
        if len(chosen) == k:
            break
    chosen.extend(dupes[: k - len(chosen)])
    return np.asarray(chosen, dtype=np.int64)


@njit(cache=True, nogil=True)
def _graft(child, donor, top, corr):
    """Write ``donor``'s cluster ``top`` into ``child`` under a fresh label.

    Afterwards every singleton of ``child`` that raises the grafted cluster's
    likelihood summand is pulled into it, in asset order.
    """
    n = child.shape[0]
    fresh = n + 1
    for i in range(n):
        if donor[i] == top:
            child[i] = fresh
    ns = 0.0
    cs = 0.0
    for i in range(n):
        if child[i] == fresh:
            ns += 1.0
            cs += corr[i, i]
            for j in range(i + 1, n):
                if child[j] == fresh:
                    cs += 2.0 * corr[i, j]
    counts = np.zeros(n + 2, dtype=np.int64)
    for i in range(n):
        counts[child[i]] += 1
    for i in range(n):
        if child[i] == fresh or counts[child[i]] != 1:
            continue
        link = 0.0
        for j in range(n):
            if child[j] == fresh:
                link += corr[i, j]
        grown = cs + 2.0 * link + corr[i, i]
        if _term(ns + 1.0, grown) > _term(ns, cs):
            child[i] = fresh
            ns += 1.0
            cs = grown


@njit(cache=True, nogil=True)
def _breed(parents, idx_a, idx_b, do_cross, use_kb, cuts, corr, children):
    n = parents.shape[1]
    m = n + 2
    n_s = np.zeros(m)
    c_s = np.zeros(m)
    seen = np.zeros(m, dtype=np.int8)
    for k in range(idx_a.shape[0]):
        a = parents[idx_a[k]]
        b = parents[idx_b[k]]
        ca = children[2 * k]
        cb = children[2 * k + 1]
        ca[:] = a
        cb[:] = b
        if not do_cross[k]:
            continue
        if use_kb[k]:
            # each child receives the other parent's best cluster not already present in it
            top_b = _best_cluster(b, corr, n_s, c_s, seen, a)
            top_a = _best_cluster(a, corr, n_s, c_s, seen, b)
            _graft(ca, b, top_b, corr)
            _graft(cb, a, top_a, corr)
        else:
            cut = cuts[k]
            for i in range(cut, n):
                ca[i] = b[i]
                cb[i] = a[i]


def crossover_knowledge(parent_a, parent_b, c, p_kb: float, rng, cut: int | None = None):
    """Cross two partitions.

    With probability ``p_kb`` the knowledge-based path runs: each offspring is
    a copy of one parent into which the other parent's best cluster (largest
    likelihood summand among clusters the receiver does not already hold) is
    transplanted whole, after which the receiver's singletons join the
    transplanted cluster if that raises its summand. Otherwise classic one-point
    crossover at ``cut`` (drawn uniformly from 1..n-1 when not given).
    Offspring are returned in canonical form.
    """
    rng = _as_rng(rng)
    c = np.ascontiguousarray(c, dtype=np.float64)
    a = as_partition(parent_a, c.shape[0])
    b = as_partition(parent_b, c.shape[0])
    n = a.shape[0]
    use_kb = rng.random() < p_kb
    if cut is None:
        cut = int(rng.integers(1, n)) if n > 1 else 0
    elif not 0 <= cut <= n:
        raise InvalidInputError(f"cut point {cut} out of range [0, {n}]")
    parents = np.stack([a, b])
    children = np.empty((2, n), dtype=np.int64)
    _breed(
        parents,
        np.array([0]),
        np.array([1]),
        np.array([True]),
        np.array([use_kb]),
        np.array([cut], dtype=np.int64),
        c,
        children,
    )
    out = _canonicalize_rows(children, n + 1)
    return out[0], out[1]


def mutate(p, p_m: float, rng, scope: str = "gene") -> np.ndarray:
    """Random replacement mutation; redrawn genes get a uniform label from 1..n.

    With ``scope="gene"`` each gene is redrawn independently with probability
    ``p_m``. With ``scope="offspring"`` the whole partition is mutated with
    probability ``p_m``, in which case one uniformly chosen gene is redrawn.
    """
    if scope not in MUTATION_SCOPES:
        raise InvalidInputError(f"scope must be one of {MUTATION_SCOPES}, got {scope!r}")
    rng = _as_rng(rng)
    labels = as_partition(p)
    n = labels.shape[0]
    mask = _mutation_mask(rng, (1, n), p_m, scope)[0]
    fresh = _draw_labels(rng, n, n)
    return _canonicalize_rows(np.where(mask, fresh, labels)[None, :], n)[0]


def _next_generation(pop: Population, corr: np.ndarray, cfg: GaConfig, rng) -> np.ndarray:
    size, n = pop.individuals.shape
    elite = select_elite(pop.individuals, pop.fitnesses, cfg.elite_size)
    n_children = size - elite.shape[0]
    n_pairs = (n_children + 1) // 2

    mating = sus_indices(scale_fitness(pop.fitnesses), 2 * n_pairs, rng)
    mating = mating[rng.permutation(2 * n_pairs)]
    do_cross = rng.random(n_pairs) < cfg.p_crossover
    use_kb = rng.random(n_pairs) < cfg.p_knowledge_crossover
    cuts = rng.integers(1, n, size=n_pairs) if n > 1 else np.zeros(n_pairs, dtype=np.int64)
    children = np.empty((2 * n_pairs, n), dtype=np.int64)
    _breed(pop.individuals, mating[0::2], mating[1::2], do_cross, use_kb, cuts, corr, children)
    children = children[:n_children]

    mask = _mutation_mask(rng, children.shape, cfg.p_mutation, cfg.mutation_scope)
    fresh = _draw_labels(rng, children.shape, n)
    children = np.where(mask, fresh, children)

    nxt = np.empty_like(pop.individuals)
    nxt[: elite.shape[0]] = pop.individuals[elite]
    nxt[elite.shape[0]:] = _canonicalize_rows(children, n + 1)
    return nxt


def evolve(
    c,
    cfg: GaConfig | None = None,
    callback: Callable[[Population], None] | None = None,
) -> GaResult:
    """Run the GA until a termination criterion fires.

    Each generation: evaluate (parallel, with barrier), record statistics,
    test termination, keep the elite, then fill the remaining slots with
    offspring from SUS selection, crossover and mutation. Terminates when the
    best fitness has improved by less than ``error_tolerance`` for
    ``stall_generations`` generations, when ``max_generations`` generations
    have been evaluated, or on reaching ``target_fitness`` if one is set.

    The reported partition has zero-likelihood clusters split into
    singletons, so structureless input yields the all-singleton answer.
    ``callback`` receives the population after every evaluation.
    """
    cfg = cfg or GaConfig()
    corr = as_correlation(c)
    n = corr.shape[0]
    rng = np.random.default_rng(cfg.seed)
    pop = initialize_population(cfg, n, rng)
    history = []
    reference = -np.inf
    reason = None

    with FitnessEvaluator(corr, cfg.workers) as evaluate:
        while reason is None:
            pop.fitnesses = evaluate(pop.individuals)
            pop.generation += 1
            i = int(np.argmax(pop.fitnesses))
            if pop.best is None or pop.fitnesses[i] > pop.best[1]:
                pop.best = (pop.individuals[i].copy(), float(pop.fitnesses[i]))
            best_fit = pop.best[1]
            history.append(pop.stats())

            if pop.generation == 1:
                reference = best_fit
            elif best_fit - reference >= cfg.error_tolerance:
                reference = best_fit
                pop.stall_counter = 0
            else:
                pop.stall_counter += 1

            if callback is not None:
                callback(pop)

            if cfg.target_fitness is not None and best_fit >= cfg.target_fitness - cfg.error_tolerance:
                reason = TerminationReason.CONVERGED
            elif pop.stall_counter >= cfg.stall_generations:
                reason = TerminationReason.STALLED
            elif pop.generation >= cfg.max_generations:
                reason = TerminationReason.MAX_GENERATIONS
            else:
                pop = replace(
                    pop,
                    individuals=_next_generation(pop, corr, cfg, rng),
                    fitnesses=np.full(pop.size, np.nan),
                )

    return GaResult(
        best_partition=dissolve_null_clusters(pop.best[0], corr),
        best_fitness=pop.best[1],
        generations_run=pop.generation,
        termination_reason=reason,
        fitness_history=np.asarray(history, dtype=np.float64).reshape(-1, 3),
    )


def default_workers() -> int:
    return os.cpu_count() or 1
