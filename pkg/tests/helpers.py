"""Instance generators and independent reference computations for the tests."""

from __future__ import annotations

import math

import numpy as np


def ref_loglik(labels, c) -> float:
    """Plain-Python likelihood written from the formula, sharing no code with the package."""
    c = np.asarray(c, dtype=float)
    groups: dict[int, list[int]] = {}
    for i, lab in enumerate(labels):
        groups.setdefault(int(lab), []).append(i)
    total = 0.0
    for members in groups.values():
        ns = len(members)
        if ns < 2:
            continue
        cs = sum(c[i][j] for i in members for j in members)
        if cs <= ns:
            continue
        cs = min(cs, ns * ns - 1e-9)
        t = math.log(ns / cs) + (ns - 1) * math.log((ns * ns - ns) / (ns * ns - cs))
        total += max(t, 0.0)
    return 0.5 * total


def fix_corr(c: np.ndarray) -> np.ndarray:
    c = 0.5 * (c + c.T)
    np.fill_diagonal(c, 1.0)
    return np.clip(c, -1.0, 1.0)


def planted_corr(sizes, rho: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact block matrix: rho inside blocks, 0 across."""
    labels = np.repeat(np.arange(1, len(sizes) + 1), sizes)
    c = np.where(labels[:, None] == labels[None, :], rho, 0.0)
    np.fill_diagonal(c, 1.0)
    return c, labels


def sampled_block_corr(rng, sizes, rho: float, d: int) -> tuple[np.ndarray, np.ndarray]:
    """Sample correlation of a one-factor-per-block panel with population correlation rho."""
    labels = np.repeat(np.arange(len(sizes)), sizes)
    g = math.sqrt(rho)
    x = g * rng.standard_normal((len(sizes), d))[labels] + math.sqrt(1 - rho) * rng.standard_normal((labels.size, d))
    return fix_corr(np.corrcoef(x)), labels + 1


def random_instance(rng, n: int) -> np.ndarray:
    """Half planted (random block sizes and strengths), half pure sample noise."""
    if rng.random() < 0.5:
        k = int(rng.integers(1, max(2, n // 2) + 1))
        cuts = np.sort(rng.choice(np.arange(1, n), size=k - 1, replace=False)) if k > 1 else []
        sizes = np.diff(np.r_[0, cuts, n]).tolist()
        labels = np.repeat(np.arange(k), sizes)
        g = rng.uniform(0.3, 0.9, size=k)[labels]
        d = int(rng.integers(50, 300))
        x = g[:, None] * rng.standard_normal((k, d))[labels] + np.sqrt(1 - g * g)[:, None] * rng.standard_normal((n, d))
        x = x[rng.permutation(n)]
    else:
        x = rng.standard_normal((n, int(rng.integers(20, 200))))
    return fix_corr(np.corrcoef(x))


def spanning_tree_min_weight(w: np.ndarray) -> float:
    """Minimum total weight over every labelled spanning tree of the complete graph on w.

    Enumerates all n**(n-2) Pruefer sequences at once and decodes them with
    vectorized leaf peeling.
    """
    n = w.shape[0]
    if n < 2:
        return 0.0
    if n == 2:
        return float(w[0, 1])
    seqs = np.indices((n,) * (n - 2)).reshape(n - 2, -1).T
    rows = np.arange(seqs.shape[0])
    degree = np.ones((seqs.shape[0], n), dtype=np.int64)
    for k in range(n - 2):
        np.add.at(degree, (rows, seqs[:, k]), 1)
    total = np.zeros(seqs.shape[0])
    for k in range(n - 2):
        leaf = np.argmax(degree == 1, axis=1)
        total += w[leaf, seqs[:, k]]
        degree[rows, leaf] = 0
        degree[rows, seqs[:, k]] -= 1
    last = np.argsort(degree != 1, axis=1, kind="stable")[:, :2]
    total += w[last[:, 0], last[:, 1]]
    return float(total.min())
