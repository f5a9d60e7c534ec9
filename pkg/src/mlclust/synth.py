"""Synthetic return panels with planted clusters (Noh one-factor-per-cluster model).

Every asset in cluster ``s`` loads on a shared Gaussian factor with weight
``g_s`` and on its own Gaussian noise with weight ``sqrt(1 - g_s**2)``, so
two members of the same cluster have population correlation ``g_s**2`` and
members of different clusters are uncorrelated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .likelihood import canonicalize

__all__ = ["PlantedSpec", "TRAINING_SEED", "generate_noh", "normalize_rows", "training_set_40"]

# fixed seed behind training_set_40
TRAINING_SEED = 20140601


@dataclass(frozen=True)
class PlantedSpec:
    n: int
    d: int
    clusters: tuple[tuple[int, float], ...]  # (member count, coupling g_s)
    seed: int = 0
    # scatter cluster members across asset positions instead of contiguous blocks
    shuffle: bool = False

    def __post_init__(self):
        object.__setattr__(self, "clusters", tuple((int(k), float(g)) for k, g in self.clusters))
        if self.n < 1 or self.d < 2:
            raise InvalidInputError("need n >= 1 assets and d >= 2 observations")
        sizes = [k for k, _ in self.clusters]
        if any(k < 1 for k in sizes):
            raise InvalidInputError("cluster sizes must be positive")
        if sum(sizes) != self.n:
            raise InvalidInputError(f"cluster sizes sum to {sum(sizes)}, expected n={self.n}")
        for _, g in self.clusters:
            if not 0.0 <= g <= 1.0:
                raise InvalidInputError(f"coupling {g} outside [0, 1]")


def normalize_rows(x: np.ndarray) -> np.ndarray:
    """Zero mean, unit sample variance (ddof=1) per row."""
    x = x - x.mean(axis=1, keepdims=True)
    sd = x.std(axis=1, ddof=1, keepdims=True)
    if np.any(sd == 0):
        raise InvalidInputError(f"row {int(np.flatnonzero(sd.ravel() == 0)[0])} has zero variance")
    return x / sd


def generate_noh(spec: PlantedSpec) -> tuple[np.ndarray, np.ndarray]:
    """Draw an (n, d) normalized return panel and its ground-truth partition."""
    rng = np.random.default_rng(spec.seed)
    k = len(spec.clusters)
    membership = np.repeat(np.arange(k), [size for size, _ in spec.clusters])
    if spec.shuffle:
        membership = membership[rng.permutation(spec.n)]
    g = np.array([gs for _, gs in spec.clusters])[membership]

    eta = rng.standard_normal((k, spec.d))
    eps = rng.standard_normal((spec.n, spec.d))
    x = g[:, None] * eta[membership] + np.sqrt(1.0 - g * g)[:, None] * eps
    return normalize_rows(x), canonicalize(membership + 1)


def training_set_40(seed: int = TRAINING_SEED) -> tuple[np.ndarray, np.ndarray]:
    """40 assets in 4 scattered clusters of 10, coupling 0.8, 500 observations."""
    spec = PlantedSpec(n=40, d=500, clusters=((10, 0.8),) * 4, seed=seed, shuffle=True)
    return generate_noh(spec)
