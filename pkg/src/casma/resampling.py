"""Bootstrap plumbing shared by the agreement and pooling modules."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import stats

MIN_REPLICATES = 100


def substream(seed: int, index: int) -> np.random.Generator:
    """Independent generator for replicate ``index`` under master ``seed``."""
    return np.random.default_rng([int(seed), int(index)])


def resample_indices(seed: int, start: int, stop: int, n: int) -> np.ndarray:
    """Row indices for replicates ``start..stop-1``, one row per replicate."""
    out = np.empty((stop - start, n), dtype=np.int64)
    for r in range(start, stop):
        out[r - start] = substream(seed, r).integers(0, n, size=n)
    return out


def _chunk_bounds(total: int, parts: int) -> list[tuple[int, int]]:
    step = -(-total // parts)
    return [(s, min(s + step, total)) for s in range(0, total, step)]


def map_replicates(fn: Callable[[int, int], np.ndarray], total: int, n_jobs: int = 1) -> np.ndarray:
    """Evaluate ``fn(start, stop)`` over replicate chunks and concatenate.

    ``fn`` must be picklable when ``n_jobs > 1``. Replicate ``r`` always uses
    substream ``r``, so the result does not depend on ``n_jobs``.
    """
    if n_jobs <= 1:
        return fn(0, total)
    bounds = _chunk_bounds(total, n_jobs)
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        parts = list(pool.map(fn, *zip(*bounds)))
    return np.concatenate(parts)


@dataclass(frozen=True)
class BCaInterval:
    low: float
    high: float
    z0: float
    acceleration: float


def jackknife_acceleration(jack: np.ndarray) -> float:
    """Acceleration constant from leave-one-out estimates."""
    jack = np.asarray(jack, dtype=float)
    d = jack.mean() - jack
    den = 6.0 * (d**2).sum() ** 1.5
    if den == 0:
        return 0.0
    return float((d**3).sum() / den)


def bca_interval(replicates: np.ndarray, point: float, jackknife: np.ndarray, level: float = 0.95) -> BCaInterval:
    """Bias-corrected and accelerated percentile interval.

    The bias correction is the probit of the share of replicates strictly
    below ``point``; acceleration comes from the jackknife skewness.
    """
    t = np.sort(np.asarray(replicates, dtype=float))
    if t.size == 0:
        raise ValueError("no bootstrap replicates")
    if t[0] == t[-1]:
        raise ValueError("bootstrap distribution is degenerate (all replicates equal)")
    prop = np.count_nonzero(t < point) / t.size
    if prop <= 0.0 or prop >= 1.0:
        raise ValueError("point estimate lies outside the bootstrap distribution")
    z0 = stats.norm.ppf(prop)
    a = jackknife_acceleration(jackknife)
    alpha = (1.0 - level) / 2.0
    ends = []
    for q in (alpha, 1.0 - alpha):
        zq = stats.norm.ppf(q)
        adj = stats.norm.cdf(z0 + (z0 + zq) / (1.0 - a * (z0 + zq)))
        ends.append(float(np.quantile(t, adj)))
    return BCaInterval(ends[0], ends[1], float(z0), a)


def shape_moments(x: np.ndarray) -> tuple[float, float]:
    """Sample skewness m3/m2^1.5 and excess kurtosis m4/m2^2 - 3."""
    x = np.asarray(x, dtype=float)
    return float(stats.skew(x, bias=True)), float(stats.kurtosis(x, fisher=True, bias=True))
