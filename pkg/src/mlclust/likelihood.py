"""Giada-Marsili log-likelihood of a cluster configuration.

A partition is a length-N integer vector of labels in 1..N; asset ``i`` sits
in cluster ``labels[i]``. For each cluster ``s`` with ``n_s`` members and
internal correlation ``c_s`` (the sum of all C_ij over members, diagonal
included) the likelihood per feature is

    L_c = 1/2 * sum_{s: n_s > 1} [ ln(n_s / c_s)
                                    + (n_s - 1) ln((n_s^2 - n_s) / (n_s^2 - c_s)) ]

Clusters whose internal correlation does not exceed their size contribute
nothing, and ``c_s`` is clamped just below ``n_s^2`` so perfectly correlated
groups stay finite. With these two rules L_c >= 0 for any valid input.

The heavy lifting lives in numba kernels that release the GIL, so the GA can
evaluate chunks of a population on a thread pool.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import log, sqrt

import numpy as np
from numba import njit

from .errors import InvalidInputError

__all__ = [
    "CLAMP_EPS",
    "ClusterStats",
    "as_correlation",
    "as_partition",
    "canonicalize",
    "cluster_stats",
    "cluster_terms",
    "delta_log_likelihood",
    "dissolve_null_clusters",
    "log_likelihood",
]

CLAMP_EPS = 1e-9


# ---------------------------------------------------------------------------
# validation helpers
# ---------------------------------------------------------------------------


def as_correlation(values, tol: float = 1e-9) -> np.ndarray:
    """Validate a correlation matrix and return it as a C-contiguous float64 array.

    Requires exact symmetry and an exactly unit diagonal; entries may exceed
    [-1, 1] by at most ``tol``.
    """
    c = np.ascontiguousarray(values, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise InvalidInputError(f"correlation matrix must be square, got shape {c.shape}")
    if c.shape[0] == 0:
        raise InvalidInputError("correlation matrix is empty")
    if not np.all(np.isfinite(c)):
        raise InvalidInputError("correlation matrix contains non-finite entries")
    if not np.array_equal(c, c.T):
        i, j = np.unravel_index(np.argmax(np.abs(c - c.T)), c.shape)
        raise InvalidInputError(f"correlation matrix is not symmetric at ({i}, {j})")
    diag = np.diag(c)
    if not np.all(diag == 1.0):
        i = int(np.flatnonzero(diag != 1.0)[0])
        raise InvalidInputError(f"correlation matrix diagonal entry {i} is {diag[i]!r}, expected 1")
    if np.max(np.abs(c)) > 1.0 + tol:
        i, j = np.unravel_index(np.argmax(np.abs(c)), c.shape)
        raise InvalidInputError(f"correlation entry ({i}, {j}) = {c[i, j]!r} outside [-1, 1]")
    return c


def as_partition(labels, n: int | None = None) -> np.ndarray:
    """Validate a label vector (labels in 1..n) and return it as int64."""
    arr = np.asarray(labels)
    if arr.ndim != 1:
        raise InvalidInputError(f"partition must be one-dimensional, got shape {arr.shape}")
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        if not np.all(arr == np.round(arr)):
            raise InvalidInputError("partition labels must be integers")
    p = np.ascontiguousarray(arr, dtype=np.int64)
    if n is not None and p.shape[0] != n:
        raise InvalidInputError(f"partition has {p.shape[0]} labels but the matrix has {n} assets")
    size = p.shape[0]
    if size and (p.min() < 1 or p.max() > size):
        raise InvalidInputError(f"partition labels must lie in [1, {size}]")
    return p


def _checked(p, c) -> tuple[np.ndarray, np.ndarray]:
    c = np.ascontiguousarray(c, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise InvalidInputError(f"correlation matrix must be square, got shape {c.shape}")
    return as_partition(p, c.shape[0]), c


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _canonicalize_into(labels, out, scratch):
    # scratch: int64 array of length >= max(label) + 1, zeroed on entry and on exit
    nxt = 1
    for i in range(labels.shape[0]):
        lab = labels[i]
        if scratch[lab] == 0:
            scratch[lab] = nxt
            nxt += 1
        out[i] = scratch[lab]
    for i in range(labels.shape[0]):
        scratch[labels[i]] = 0


@njit(cache=True, nogil=True)
def _canonicalize_rows(labels2d, max_label):
    out = np.empty_like(labels2d)
    scratch = np.zeros(max_label + 1, dtype=np.int64)
    for r in range(labels2d.shape[0]):
        _canonicalize_into(labels2d[r], out[r], scratch)
    return out


@njit(cache=True, nogil=True)
def _term(ns, cs):
    # one cluster's summand, before the overall factor 1/2
    if ns <= 1.0 or cs <= ns:
        return 0.0
    n2 = ns * ns
    if cs > n2 - 1e-9:
        cs = n2 - 1e-9
    t = log(ns / cs) + (ns - 1.0) * log((n2 - ns) / (n2 - cs))
    if t < 0.0:
        return 0.0
    return t


@njit(cache=True, nogil=True)
def _accumulate(labels, corr, n_s, c_s):
    # n_s, c_s indexed by raw label; must be zeroed by the caller
    n = labels.shape[0]
    for i in range(n):
        li = labels[i]
        n_s[li] += 1.0
        acc = corr[i, i]
        row = corr[i]
        for j in range(i + 1, n):
            if labels[j] == li:
                acc += 2.0 * row[j]
        c_s[li] += acc


@njit(cache=True, nogil=True)
def _loglik_scratch(labels, corr, n_s, c_s, seen):
    _accumulate(labels, corr, n_s, c_s)
    total = 0.0
    # sum clusters in order of first occurrence so relabeling cannot change rounding
    for i in range(labels.shape[0]):
        li = labels[i]
        if seen[li] == 0:
            seen[li] = 1
            total += _term(n_s[li], c_s[li])
    for i in range(labels.shape[0]):
        li = labels[i]
        n_s[li] = 0.0
        c_s[li] = 0.0
        seen[li] = 0
    return 0.5 * total


@njit(cache=True, nogil=True)
def _loglik(labels, corr):
    m = labels.shape[0] + 2
    return _loglik_scratch(
        labels, corr, np.zeros(m), np.zeros(m), np.zeros(m, dtype=np.int8)
    )


@njit(cache=True, nogil=True)
def _loglik_rows(labels2d, corr, out, start, stop):
    m = labels2d.shape[1] + 2
    n_s = np.zeros(m)
    c_s = np.zeros(m)
    seen = np.zeros(m, dtype=np.int8)
    for r in range(start, stop):
        out[r] = _loglik_scratch(labels2d[r], corr, n_s, c_s, seen)


@njit(cache=True, nogil=True)
def _best_cluster(labels, corr, n_s, c_s, seen, other):
    """Label of the cluster with the largest summand (first occurrence wins ties).

    Clusters that already appear intact in ``other`` are skipped, since
    transplanting them would be a no-op; if every cluster is shared the
    overall best is returned.
    """
    n = labels.shape[0]
    _accumulate(labels, corr, n_s, c_s)
    best_label = labels[0]
    best = -1.0
    fallback_label = labels[0]
    fallback = -1.0
    for i in range(n):
        li = labels[i]
        if seen[li] != 0:
            continue
        seen[li] = 1
        t = _term(n_s[li], c_s[li])
        if t > fallback:
            fallback = t
            fallback_label = li
        if t <= best:
            continue
        # intact in `other` iff all members share other's label and that label has no outsiders
        ol = other[i]
        intact = True
        for j in range(n):
            if (labels[j] == li) != (other[j] == ol):
                intact = False
                break
        if not intact:
            best = t
            best_label = li
    for i in range(n):
        li = labels[i]
        n_s[li] = 0.0
        c_s[li] = 0.0
        seen[li] = 0
    if best < 0.0:
        return fallback_label
    return best_label


@njit(cache=True, nogil=True)
def _cluster_moments(labels, corr, asset, label):
    # n and c of cluster `label` with `asset` removed, plus sum of C[asset, j] over those members
    n = labels.shape[0]
    ns = 0.0
    cs = 0.0
    link = 0.0
    for i in range(n):
        if i == asset or labels[i] != label:
            continue
        ns += 1.0
        cs += corr[i, i]
        link += corr[asset, i]
        for j in range(i + 1, n):
            if j != asset and labels[j] == label:
                cs += 2.0 * corr[i, j]
    return ns, cs, link


@njit(cache=True, nogil=True)
def _delta(labels, corr, asset, new_label):
    old = labels[asset]
    if new_label == old:
        return 0.0
    a_diag = corr[asset, asset]
    n_o, c_o, link_o = _cluster_moments(labels, corr, asset, old)
    n_n, c_n, link_n = _cluster_moments(labels, corr, asset, new_label)
    before = _term(n_o + 1.0, c_o + 2.0 * link_o + a_diag) + _term(n_n, c_n)
    after = _term(n_o, c_o) + _term(n_n + 1.0, c_n + 2.0 * link_n + a_diag)
    return 0.5 * (after - before)


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClusterStats:
    label: int
    n_s: int
    c_s: float
    g_star: float


def canonicalize(labels) -> np.ndarray:
    """Renumber labels by order of first occurrence (asset 0 gets label 1).

    Accepts a single label vector or a 2-D batch (one partition per row).
    """
    arr = np.ascontiguousarray(labels, dtype=np.int64)
    if arr.ndim == 1:
        if arr.size == 0:
            return arr.copy()
        return _canonicalize_rows(arr[None, :], int(arr.max()))[0]
    if arr.ndim == 2:
        if arr.size == 0:
            return arr.copy()
        return _canonicalize_rows(arr, int(arr.max()))
    raise InvalidInputError(f"expected 1-D or 2-D labels, got shape {arr.shape}")


def optimal_coupling(n_s: float, c_s: float) -> float:
    """Maximum-likelihood coupling g* for one cluster (0 for singletons or c_s <= n_s)."""
    if n_s <= 1 or c_s <= n_s:
        return 0.0
    g2 = (c_s - n_s) / (n_s * n_s - n_s)
    return sqrt(min(g2, 1.0))


def cluster_stats(p, c) -> list[ClusterStats]:
    """Per-cluster size, internal correlation and optimal coupling.

    Clusters are listed in order of first occurrence in ``p``.
    """
    p, c = _checked(p, c)
    m = p.shape[0] + 2
    n_s = np.zeros(m)
    c_s = np.zeros(m)
    _accumulate(p, c, n_s, c_s)
    out = []
    seen = set()
    for lab in p.tolist():
        if lab in seen:
            continue
        seen.add(lab)
        ns, cs = int(n_s[lab]), float(c_s[lab])
        out.append(ClusterStats(lab, ns, cs, optimal_coupling(ns, cs)))
    return out


def cluster_terms(p, c) -> dict[int, float]:
    """Each cluster's contribution to the log-likelihood (already halved)."""
    return {
        s.label: 0.5 * float(_term(float(s.n_s), s.c_s)) for s in cluster_stats(p, c)
    }


def log_likelihood(p, c) -> float:
    """Per-feature log-likelihood L_c of partition ``p`` under correlation ``c``."""
    p, c = _checked(p, c)
    return float(_loglik(p, c))


def delta_log_likelihood(p, c, asset: int, new_label: int) -> float:
    """Change in L_c when ``asset`` is moved to cluster ``new_label``.

    Only the two affected clusters are recomputed.
    """
    p, c = _checked(p, c)
    n = p.shape[0]
    if not 0 <= asset < n:
        raise InvalidInputError(f"asset index {asset} out of range [0, {n})")
    if not 1 <= new_label <= n:
        raise InvalidInputError(f"label {new_label} out of range [1, {n}]")
    return float(_delta(p, c, int(asset), int(new_label)))


def dissolve_null_clusters(p, c) -> np.ndarray:
    """Split every cluster whose likelihood summand is zero into singletons.

    Such clusters carry no evidence of shared structure. The fitness is
    unchanged bit-for-bit (only zero terms leave the sum) and the result is
    returned in canonical form.
    """
    p, c = _checked(p, c)
    out = p.copy()
    fresh = p.shape[0] + 1
    for s in cluster_stats(p, c):
        if s.n_s > 1 and _term(float(s.n_s), s.c_s) == 0.0:
            for i in np.flatnonzero(p == s.label):
                out[i] = fresh
                fresh += 1
    return canonicalize(out)
