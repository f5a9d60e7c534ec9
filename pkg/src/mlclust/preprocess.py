"""From midprice ticks to cleaned correlation matrices.

Stages, in pipeline order: bar aggregation, zero-order hold, normalized
log-returns, market-mode removal, online EWMA covariance, correlation
extraction and random-matrix cleaning of the noise band.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from math import ceil, sqrt
from typing import Iterator, Sequence

import numpy as np

from .errors import DegenerateInputWarning, InvalidInputError, NumericalError

__all__ = [
    "BarMatrix",
    "EwmaState",
    "TickSeries",
    "aggregate_bars",
    "correlation_from_covariance",
    "correlation_pipeline",
    "effective_q",
    "ewma_update",
    "marchenko_pastur_band",
    "normalize_returns",
    "remove_market_mode",
    "rmt_clean",
    "sample_correlation",
    "zero_order_hold",
]

DEFAULT_LAMBDA = 0.98
THREE_MINUTES_MS = 3 * 60 * 1000


@dataclass
class TickSeries:
    """Per-asset midprice ticks; timestamps are epoch milliseconds."""

    assets: list[str]
    timestamps: list[np.ndarray]
    prices: list[np.ndarray]

    def __post_init__(self):
        if not (len(self.assets) == len(self.timestamps) == len(self.prices)):
            raise InvalidInputError("assets, timestamps and prices must have equal length")
        self.timestamps = [np.asarray(t, dtype=np.int64) for t in self.timestamps]
        self.prices = [np.asarray(p, dtype=np.float64) for p in self.prices]
        for name, t, p in zip(self.assets, self.timestamps, self.prices):
            if t.shape != p.shape:
                raise InvalidInputError(f"asset {name}: {t.size} timestamps but {p.size} prices")
            if np.any(np.diff(t) < 0):
                raise InvalidInputError(f"asset {name}: timestamps must be non-decreasing")
            if np.any(~(p > 0)):
                raise InvalidInputError(f"asset {name}: prices must be positive")

    @classmethod
    def from_records(cls, records) -> "TickSeries":
        """Build from ``(asset_id, timestamp_ms, midprice)`` rows; assets come out sorted by id."""
        by_asset: dict[str, list[tuple[int, float]]] = {}
        for asset, ts, price in records:
            by_asset.setdefault(str(asset), []).append((int(ts), float(price)))
        assets = sorted(by_asset)
        # stable sort keeps arrival order for equal timestamps
        rows = [sorted(by_asset[a], key=lambda r: r[0]) for a in assets]
        return cls(
            assets,
            [np.array([r[0] for r in rs], dtype=np.int64) for rs in rows],
            [np.array([r[1] for r in rs], dtype=np.float64) for rs in rows],
        )

    @property
    def empty(self) -> bool:
        return all(t.size == 0 for t in self.timestamps)


@dataclass
class BarMatrix:
    assets: list[str]
    bar_end_ms: np.ndarray  # exclusive end of each bar
    prices: np.ndarray  # (n_assets, n_bars); NaN marks a bar without ticks


def aggregate_bars(ticks: TickSeries, bar_ms: int = THREE_MINUTES_MS, drop_empty: bool = True) -> BarMatrix:
    """Last tick per asset in each ``bar_ms`` bucket.

    Buckets are aligned to multiples of ``bar_ms`` starting at the earliest
    tick. A bucket in which an asset did not tick is NaN for that asset. With
    ``drop_empty`` buckets where no asset ticked (market closed) are removed.
    """
    if bar_ms <= 0:
        raise InvalidInputError("bar_ms must be positive")
    if ticks.empty:
        return BarMatrix(list(ticks.assets), np.empty(0, dtype=np.int64), np.empty((len(ticks.assets), 0)))
    t_min = min(int(t[0]) for t in ticks.timestamps if t.size)
    t_max = max(int(t[-1]) for t in ticks.timestamps if t.size)
    start = (t_min // bar_ms) * bar_ms
    n_bars = (t_max - start) // bar_ms + 1
    out = np.full((len(ticks.assets), n_bars), np.nan)
    for a, (t, p) in enumerate(zip(ticks.timestamps, ticks.prices)):
        if t.size == 0:
            continue
        idx = (t - start) // bar_ms
        last = np.r_[idx[1:] != idx[:-1], True]
        out[a, idx[last]] = p[last]
    ends = start + bar_ms * (np.arange(n_bars, dtype=np.int64) + 1)
    if drop_empty:
        keep = ~np.all(np.isnan(out), axis=0)
        out, ends = out[:, keep], ends[keep]
    return BarMatrix(list(ticks.assets), ends, out)


def zero_order_hold(prices, assets: Sequence[str] | None = None) -> np.ndarray:
    """Fill gaps with the last observed price; leading gaps take the first observation."""
    x = np.array(prices, dtype=np.float64, ndmin=2)
    valid = ~np.isnan(x)
    dead = np.flatnonzero(~valid.any(axis=1))
    if dead.size:
        i = int(dead[0])
        name = assets[i] if assets is not None else str(i)
        raise InvalidInputError(f"asset {name} has no observed prices")
    cols = np.arange(x.shape[1])
    last_seen = np.maximum.accumulate(np.where(valid, cols, -1), axis=1)
    first = valid.argmax(axis=1)
    src = np.where(last_seen >= 0, last_seen, first[:, None])
    return np.take_along_axis(x, src, axis=1)


def normalize_returns(prices, assets: Sequence[str] | None = None) -> np.ndarray:
    """Log-returns per asset, demeaned and scaled to unit sample variance (ddof=1)."""
    x = np.array(prices, dtype=np.float64, ndmin=2)
    if x.shape[1] < 3:
        raise InvalidInputError(f"need at least 3 bars per asset, got {x.shape[1]}")
    if not np.all(np.isfinite(x)) or np.any(x <= 0):
        raise InvalidInputError("prices must be finite and positive")
    r = np.diff(np.log(x), axis=1)
    r = r - r.mean(axis=1, keepdims=True)
    sd = r.std(axis=1, ddof=1)
    flat = np.flatnonzero(sd == 0)
    if flat.size:
        i = int(flat[0])
        name = assets[i] if assets is not None else str(i)
        raise InvalidInputError(f"asset {name} has constant price (zero return variance)")
    return r / sd[:, None]


def _row_correlation(x: np.ndarray) -> np.ndarray:
    xc = x - x.mean(axis=1, keepdims=True)
    s = np.sqrt(np.einsum("ij,ij->i", xc, xc))
    return (xc @ xc.T) / np.outer(s, s)


def _mean_offdiag(c: np.ndarray) -> float:
    n = c.shape[0]
    return float((c.sum() - np.trace(c)) / (n * (n - 1)))


def remove_market_mode(panel, tol: float = 0.01, max_iter: int = 10) -> np.ndarray:
    """Strip the common mode from a normalized return panel.

    Each pass regresses every asset on the cross-sectional mean return and
    removes a shrunken share of the fitted component, the share chosen so an
    equicorrelated panel lands at zero average correlation; rows are then
    renormalized. Passes repeat until the mean off-diagonal correlation is
    below ``tol`` in magnitude or ``max_iter`` passes have run.

    Rows that vanish (e.g. every asset the same series) are returned as zeros
    and a ``DegenerateInputWarning`` is issued.
    """
    x = np.array(panel, dtype=np.float64, ndmin=2)
    n = x.shape[0]
    if n < 2:
        raise InvalidInputError("market-mode removal needs at least 2 assets")
    for _ in range(max_iter):
        rho = _mean_offdiag(_row_correlation(x))
        if abs(rho) < tol:
            break
        spread = 1.0 + (n - 1) * rho
        m = x.mean(axis=0)
        mm = float(m @ m)
        if spread <= 0.0 or mm == 0.0:
            break
        beta = (x @ m) / mm
        share = 1.0 - sqrt((1.0 - rho) / spread)
        resid = x - share * beta[:, None] * m[None, :]
        resid -= resid.mean(axis=1, keepdims=True)
        sd = resid.std(axis=1, ddof=1)
        gone = sd < 1e-8
        if gone.any():
            warnings.warn(
                f"market mode explains all variance of {int(gone.sum())} asset(s); residuals set to zero",
                DegenerateInputWarning,
                stacklevel=2,
            )
            resid[gone] = 0.0
            resid[~gone] /= sd[~gone, None]
            return resid
        x = resid / sd[:, None]
    return x


@dataclass
class EwmaState:
    lam: float
    mean: np.ndarray
    cov: np.ndarray
    count: int = 0

    @classmethod
    def zeros(cls, n: int, lam: float = DEFAULT_LAMBDA) -> "EwmaState":
        if not 0.0 < lam < 1.0:
            raise InvalidInputError(f"forgetting factor must lie in (0, 1), got {lam}")
        return cls(lam, np.zeros(n), np.zeros((n, n)))


def ewma_update(state: EwmaState, x) -> EwmaState:
    """Absorb one observation in place and return the state.

    mean <- lam * mean + (1 - lam) * x
    cov  <- lam * cov  + (1 - lam) * (x - mean_prev)(x - mean_prev)^T
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != state.mean.shape:
        raise InvalidInputError(f"observation has shape {x.shape}, expected {state.mean.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("observation contains non-finite values")
    lam = state.lam
    dev = x - state.mean
    state.mean = lam * state.mean + (1.0 - lam) * x
    state.cov = lam * state.cov + (1.0 - lam) * np.outer(dev, dev)
    state.count += 1
    return state


def correlation_from_covariance(cov) -> np.ndarray:
    """C_ij = cov_ij / sqrt(cov_ii cov_jj), with an exact unit diagonal."""
    cov = np.asarray(cov, dtype=np.float64)
    d = np.diag(cov)
    bad = np.flatnonzero(~(d > 0))
    if bad.size:
        i = int(bad[0])
        raise InvalidInputError(f"covariance diagonal entry {i} is {d[i]!r}; must be positive")
    s = np.sqrt(d)
    c = np.clip(cov / np.outer(s, s), -1.0, 1.0)
    c = 0.5 * (c + c.T)
    np.fill_diagonal(c, 1.0)
    return c


def sample_correlation(panel) -> np.ndarray:
    """Pearson correlation of the rows of an (n, d) panel."""
    x = np.array(panel, dtype=np.float64, ndmin=2)
    if x.shape[1] < 2:
        raise InvalidInputError("need at least 2 observations per asset")
    xc = x - x.mean(axis=1, keepdims=True)
    return correlation_from_covariance(xc @ xc.T / (x.shape[1] - 1))


def marchenko_pastur_band(q: float) -> tuple[float, float]:
    """Eigenvalue support of a pure-noise correlation matrix with ratio q = N/D."""
    r = sqrt(q)
    return (1.0 - r) ** 2, (1.0 + r) ** 2


def effective_q(n: int, lam: float | None = None, d: int | None = None) -> float:
    """N/D for the noise band; an EWMA estimate counts as 1/(1-lam) observations."""
    if d is None:
        if lam is None:
            raise InvalidInputError("need either a sample length or a forgetting factor")
        d = 1.0 / (1.0 - lam)
    return n / d


def _merge_band(c: np.ndarray, lo: float, hi: float) -> np.ndarray | None:
    """One merge-and-rescale step; None when fewer than two eigenvalues sit in the band."""
    try:
        w, v = np.linalg.eigh(c)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition failed (condition number {np.linalg.cond(c):.3e})") from exc
    inside = (w >= lo) & (w <= hi)
    if inside.sum() < 2:
        return None
    if inside.all():
        # pure noise: the merged spectrum is flat, i.e. the identity
        return np.eye(c.shape[0])
    w = w.copy()
    w[inside] = w[inside].mean()
    out = (v * w) @ v.T
    out = 0.5 * (out + out.T)
    d = np.diag(out)
    if np.any(d <= 0):
        raise NumericalError(f"cleaned matrix lost positivity (min diagonal {d.min():.3e})")
    s = np.sqrt(d)
    out = np.clip(out / np.outer(s, s), -1.0, 1.0)
    out = 0.5 * (out + out.T)
    np.fill_diagonal(out, 1.0)
    return out


def rmt_clean(c, q: float, tol: float = 1e-12, max_iter: int = 500) -> np.ndarray:
    """Replace eigenvalues inside the Marchenko-Pastur band by their average.

    The band average keeps the trace. Restoring the unit diagonal afterwards
    nudges the spectrum, so merge and rescale repeat until entries move by
    less than ``tol``; the result is a fixed point and cleaning it again is a
    no-op.
    """
    if not q > 0:
        raise InvalidInputError(f"q must be positive, got {q}")
    c = np.asarray(c, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise InvalidInputError(f"expected a square matrix, got shape {c.shape}")
    if not np.all(np.isfinite(c)):
        raise NumericalError("correlation matrix has non-finite entries; cannot eigendecompose")
    if not np.allclose(c, c.T, atol=1e-12, rtol=0):
        raise InvalidInputError("rmt_clean needs a symmetric matrix")
    lo, hi = marchenko_pastur_band(q)
    out = 0.5 * (c + c.T)
    np.fill_diagonal(out, 1.0)
    for _ in range(max_iter):
        nxt = _merge_band(out, lo, hi)
        if nxt is None:
            break
        moved = np.abs(nxt - out).max()
        out = nxt
        if moved < tol:
            break
    return out


@dataclass
class PipelineConfig:
    lam: float = DEFAULT_LAMBDA
    # EWMA updates absorbed before the first matrix is emitted; None -> ceil(1/(1-lam))
    warmup: int | None = None
    market_mode: bool = True
    rmt: bool = True
    # noise-band ratio override; None -> n * (1 - lam)
    q: float | None = None
    extra: dict = field(default_factory=dict)

    def resolved_warmup(self) -> int:
        if self.warmup is not None:
            return max(1, int(self.warmup))
        return int(ceil(1.0 / (1.0 - self.lam) - 1e-9))


def correlation_pipeline(
    prices,
    config: PipelineConfig | None = None,
    assets: Sequence[str] | None = None,
) -> Iterator[tuple[int, np.ndarray]]:
    """Yield ``(return_index, cleaned_correlation)`` for a gappy price matrix.

    Order: hold -> log-returns -> market mode -> EWMA -> correlation -> clean.
    One matrix is emitted per return observation once ``warmup`` updates have
    been absorbed, so a panel of B bars yields B - warmup matrices.
    """
    cfg = config or PipelineConfig()
    held = zero_order_hold(prices, assets)
    returns = normalize_returns(held, assets)
    if cfg.market_mode:
        returns = remove_market_mode(returns)
    n, d = returns.shape
    warmup = cfg.resolved_warmup()
    q = cfg.q if cfg.q is not None else effective_q(n, lam=cfg.lam)
    state = EwmaState.zeros(n, cfg.lam)
    for t in range(d):
        ewma_update(state, returns[:, t])
        if state.count < warmup:
            continue
        corr = correlation_from_covariance(state.cov)
        if cfg.rmt:
            corr = rmt_clean(corr, q)
        yield t, corr
