"""Reference solvers used to check the GA: exhaustive search and simulated annealing."""

from __future__ import annotations

from dataclasses import dataclass, field
from math import exp
from typing import Iterator

import numpy as np
from numba import njit

from .errors import InvalidInputError
from .likelihood import _loglik_scratch, _term, as_correlation, dissolve_null_clusters, log_likelihood

__all__ = [
    "AnnealingSchedule",
    "MAX_BRUTE_FORCE_N",
    "OracleResult",
    "bell_number",
    "brute_force_max",
    "restricted_growth_strings",
    "simulated_annealing",
]

MAX_BRUTE_FORCE_N = 12


@dataclass
class OracleResult:
    best_partition: np.ndarray
    best_fitness: float
    partitions_examined: int
    # best-seen fitness after each temperature level (annealing only)
    trace: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False)


@dataclass(frozen=True)
class AnnealingSchedule:
    t0: float = 1.0
    cooling: float = 0.995
    steps: int = 100_000
    steps_per_temperature: int = 100
    chains: int = 1

    def __post_init__(self):
        if self.t0 <= 0 or not 0 < self.cooling < 1:
            raise InvalidInputError("need t0 > 0 and 0 < cooling < 1")
        if self.steps < 1 or self.steps_per_temperature < 1 or self.chains < 1:
            raise InvalidInputError("steps, steps_per_temperature and chains must be positive")


def bell_number(n: int) -> int:
    """Number of set partitions of n items (Bell triangle)."""
    row = [1]
    for _ in range(n):
        nxt = [row[-1]]
        for v in row:
            nxt.append(nxt[-1] + v)
        row = nxt
    return row[0]


def restricted_growth_strings(n: int) -> Iterator[tuple[int, ...]]:
    """Yield every set partition of n items as a 1-based canonical label tuple.

    Strings come out in lexicographic order, one per set partition.
    """
    if n == 0:
        yield ()
        return
    a = [1] * n
    while True:
        yield tuple(a)
        # rightmost position that may still grow
        j = n - 1
        while j > 0 and a[j] > max(a[:j]):
            j -= 1
        if j == 0:
            return
        a[j] += 1
        for k in range(j + 1, n):
            a[k] = 1


@njit(cache=True)
def _enumerate_max(corr):
    n = corr.shape[0]
    a = np.ones(n, dtype=np.int64)
    prefix_max = np.ones(n, dtype=np.int64)  # max(a[0..i])
    best = a.copy()
    m = n + 2
    n_s = np.zeros(m)
    c_s = np.zeros(m)
    seen = np.zeros(m, dtype=np.int8)
    best_fit = _loglik_scratch(a, corr, n_s, c_s, seen)
    best_k = 1
    count = 1
    while True:
        j = n - 1
        while j > 0 and a[j] > prefix_max[j - 1]:
            j -= 1
        if j == 0:
            break
        a[j] += 1
        prefix_max[j] = max(prefix_max[j - 1], a[j])
        for k in range(j + 1, n):
            a[k] = 1
            prefix_max[k] = prefix_max[j]
        count += 1
        f = _loglik_scratch(a, corr, n_s, c_s, seen)
        # canonical strings: the cluster count is the largest label
        k = prefix_max[n - 1]
        if f > best_fit or (f == best_fit and k > best_k):
            best_fit = f
            best_k = k
            best[:] = a
    return best, best_fit, count


def brute_force_max(c) -> OracleResult:
    """Exact maximum of L_c over every set partition (n <= 12).

    Among exact ties the partition with more clusters wins, then the
    lexicographically smallest canonical label vector.
    """
    corr = as_correlation(c)
    n = corr.shape[0]
    if n > MAX_BRUTE_FORCE_N:
        raise InvalidInputError(
            f"brute force is limited to n <= {MAX_BRUTE_FORCE_N} (Bell({n}) = {bell_number(n)} partitions)"
        )
    best, fit, count = _enumerate_max(corr)
    return OracleResult(best, float(fit), int(count))


@njit(cache=True)
def _anneal(corr, assets, labels, uniforms, t0, cooling, steps_per_temp):
    n = corr.shape[0]
    steps = assets.shape[0]
    m = n + 2
    cur = np.arange(1, n + 1).astype(np.int64)  # all singletons, L = 0
    n_s = np.zeros(m)
    c_s = np.zeros(m)
    for i in range(n):
        n_s[cur[i]] = 1.0
        c_s[cur[i]] = corr[i, i]
    cur_fit = 0.0
    best = cur.copy()
    best_fit = 0.0
    n_levels = (steps + steps_per_temp - 1) // steps_per_temp
    trace = np.empty(n_levels)
    temp = t0
    for step in range(steps):
        a = assets[step]
        new = labels[step]
        old = cur[a]
        if new != old:
            link_old = 0.0
            link_new = 0.0
            for j in range(n):
                if j == a:
                    continue
                if cur[j] == old:
                    link_old += corr[a, j]
                elif cur[j] == new:
                    link_new += corr[a, j]
            caa = corr[a, a]
            c_old = c_s[old] - 2.0 * link_old - caa
            c_new = c_s[new] + 2.0 * link_new + caa
            delta = 0.5 * (
                _term(n_s[old] - 1.0, c_old)
                + _term(n_s[new] + 1.0, c_new)
                - _term(n_s[old], c_s[old])
                - _term(n_s[new], c_s[new])
            )
            if delta >= 0.0 or uniforms[step] < exp(delta / temp):
                cur[a] = new
                n_s[old] -= 1.0
                c_s[old] = c_old
                n_s[new] += 1.0
                c_s[new] = c_new
                cur_fit += delta
                if cur_fit > best_fit + 1e-12:
                    best_fit = cur_fit
                    best[:] = cur
        if (step + 1) % steps_per_temp == 0 or step == steps - 1:
            trace[step // steps_per_temp] = best_fit
            temp *= cooling
    return best, trace


def simulated_annealing(c, schedule: AnnealingSchedule | None = None, seed: int = 0) -> OracleResult:
    """Metropolis search over single-asset relabels with geometric cooling.

    Maximizes L_c (energy -L_c) starting from the all-singleton partition.
    The temperature is multiplied by ``cooling`` every
    ``steps_per_temperature`` moves. With several chains the best result wins,
    ties going to the earliest chain. Returns the best partition seen.
    """
    schedule = schedule or AnnealingSchedule()
    corr = as_correlation(c)
    n = corr.shape[0]
    best_labels, best_fit, best_trace = None, -np.inf, None
    for child in np.random.SeedSequence(seed).spawn(schedule.chains):
        rng = np.random.default_rng(child)
        assets = rng.integers(0, n, size=schedule.steps)
        labels = rng.integers(1, n + 1, size=schedule.steps)
        uniforms = rng.random(schedule.steps)
        labs, trace = _anneal(
            corr, assets, labels, uniforms, schedule.t0, schedule.cooling, schedule.steps_per_temperature
        )
        labs = dissolve_null_clusters(labs, corr)
        fit = log_likelihood(labs, corr)
        if fit > best_fit:
            best_labels, best_fit, best_trace = labs, fit, trace
    return OracleResult(best_labels, best_fit, schedule.steps * schedule.chains, best_trace)
