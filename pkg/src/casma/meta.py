"""Random-effects pooling of log risk ratios.

The model is the usual normal-normal one: ``y_i ~ N(mu, v_i + tau2)``. The
between-study variance is estimated by REML (Fisher scoring) or
DerSimonian-Laird, and inference on ``mu`` uses Wald intervals.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from functools import partial
from typing import Optional, Sequence

import numpy as np
from scipy import optimize, stats

from . import resampling
from .effects import EffectEstimate

ESTIMATORS = ("reml", "dl")


class ConvergenceError(RuntimeError):
    pass


def _arrays(estimates: Sequence[EffectEstimate]) -> tuple[np.ndarray, np.ndarray]:
    if len(estimates) == 0:
        raise ValueError("no studies to pool")
    y = np.array([e.yi for e in estimates], dtype=float)
    v = np.array([e.vi for e in estimates], dtype=float)
    if not np.all(v > 0) or not np.all(np.isfinite(v)) or not np.all(np.isfinite(y)):
        raise ValueError("every study needs a finite effect and a positive, finite variance")
    return y, v


# --------------------------------------------------------------------------
# tau^2 estimators
# --------------------------------------------------------------------------


def q_statistic(y: np.ndarray, v: np.ndarray, tau2: float = 0.0) -> float:
    """Generalized Q: weighted squared deviations from the weighted mean at ``tau2``."""
    w = 1.0 / (v + tau2)
    mu = (w * y).sum() / w.sum()
    return float((w * (y - mu) ** 2).sum())


def tau2_dl(y: np.ndarray, v: np.ndarray) -> float:
    w = 1.0 / v
    sw = w.sum()
    c = sw - (w**2).sum() / sw
    q = q_statistic(y, v)
    if c <= 0:
        return 0.0
    return max(0.0, (q - (len(y) - 1)) / c)


def restricted_loglik(y: np.ndarray, v: np.ndarray, tau2: float) -> float:
    """Restricted log-likelihood (constants dropped) with mu profiled out."""
    s = v + tau2
    w = 1.0 / s
    sw = w.sum()
    mu = (w * y).sum() / sw
    return -0.5 * (np.log(s).sum() + math.log(sw) + (w * (y - mu) ** 2).sum())


def ml_loglik(y: np.ndarray, v: np.ndarray, tau2: float) -> float:
    s = v + tau2
    w = 1.0 / s
    mu = (w * y).sum() / w.sum()
    return -0.5 * (np.log(s).sum() + (w * (y - mu) ** 2).sum())


def _reml_fisher(y, v, tol=1e-8, max_iter=100):
    tau2 = tau2_dl(y, v)
    for it in range(1, max_iter + 1):
        w = 1.0 / (v + tau2)
        sw = w.sum()
        w2 = w * w
        sw2 = w2.sum()
        r = y - (w * y).sum() / sw
        tr_p = sw - sw2 / sw
        tr_pp = sw2 - 2.0 * (w2 * w).sum() / sw + (sw2 / sw) ** 2
        if not tr_pp > 0 or not math.isfinite(tr_pp):
            return tau2, False, it
        new = max(0.0, tau2 + ((w2 * r * r).sum() - tr_p) / tr_pp)
        if not math.isfinite(new):
            return tau2, False, it
        if abs(new - tau2) < tol:
            return new, True, it
        tau2 = new
    return tau2, False, max_iter


def _reml_bracketed(y, v):
    hi = max(1.0, 10.0 * float(np.var(y)) + float(v.max()))
    res = optimize.minimize_scalar(lambda t: -restricted_loglik(y, v, t), bounds=(0.0, hi), method="bounded",
                                   options={"xatol": 1e-10})
    best = float(res.x)
    if restricted_loglik(y, v, 0.0) >= restricted_loglik(y, v, best):
        best = 0.0
    return best


def tau2_reml(y: np.ndarray, v: np.ndarray, strict: bool = False) -> tuple[float, bool]:
    """REML estimate of tau2 and whether Fisher scoring converged.

    When scoring fails to settle (``|step| < 1e-8`` within 100 iterations) a
    bounded scalar search is used instead, unless ``strict`` is set, in which
    case :class:`ConvergenceError` is raised.
    """
    tau2, ok, _ = _reml_fisher(y, v)
    if ok:
        return tau2, True
    if strict:
        raise ConvergenceError("REML Fisher scoring did not converge")
    return _reml_bracketed(y, v), False


def estimate_tau2(y, v, estimator: str = "reml", strict: bool = False) -> tuple[float, bool]:
    if estimator == "reml":
        return tau2_reml(y, v, strict)
    if estimator == "dl":
        return tau2_dl(y, v), True
    raise ValueError(f"unknown estimator {estimator!r}; choose from {ESTIMATORS}")


# --------------------------------------------------------------------------
# pooled model
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PooledResult:
    k: int
    mu: float
    se_mu: float
    ci_low: float
    ci_high: float
    z: float
    p: float
    tau2: float
    Q: float
    df: int
    i_squared: float
    h_squared: float
    estimator: str
    level: float = 0.95
    converged: bool = True
    single_study: bool = False

    @property
    def rr(self) -> float:
        return math.exp(self.mu)

    @property
    def rr_low(self) -> float:
        return math.exp(self.ci_low)

    @property
    def rr_high(self) -> float:
        return math.exp(self.ci_high)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(rr=self.rr, rr_low=self.rr_low, rr_high=self.rr_high)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PooledResult":
        names = cls.__dataclass_fields__.keys()
        return cls(**{k: d[k] for k in names if k in d})


@dataclass(frozen=True)
class Heterogeneity:
    Q: float
    df: int
    i_squared: float
    h_squared: float
    tau2: float


def typical_within_variance(v: np.ndarray) -> float:
    w = 1.0 / v
    sw = w.sum()
    return float((len(v) - 1) * sw / (sw**2 - (w**2).sum()))


def _heterogeneity(y, v, tau2):
    df = len(y) - 1
    q = q_statistic(y, v)
    s2 = typical_within_variance(v)
    i2 = 100.0 * tau2 / (tau2 + s2)
    h2 = (tau2 + s2) / s2
    return q, df, i2, h2


def heterogeneity_stats(estimates: Sequence[EffectEstimate], estimator: str = "reml") -> Heterogeneity:
    """Q at inverse-variance weights, plus I2 and H2 at the estimated tau2.

    I2 = tau2 / (tau2 + s2) with s2 the typical within-study variance, so it
    is exactly zero whenever tau2 is.
    """
    y, v = _arrays(estimates)
    if len(y) < 2:
        raise ValueError("heterogeneity needs at least two studies")
    tau2, _ = estimate_tau2(y, v, estimator)
    return Heterogeneity(*_heterogeneity(y, v, tau2), tau2=tau2)


def _pool_arrays(y, v, estimator="reml", level=0.95, strict=False) -> PooledResult:
    k = len(y)
    zcrit = stats.norm.ppf(0.5 + level / 2.0)
    if k == 1:
        se = math.sqrt(v[0])
        mu = float(y[0])
        return PooledResult(1, mu, se, mu - zcrit * se, mu + zcrit * se, mu / se, 2 * stats.norm.sf(abs(mu / se)),
                            0.0, 0.0, 0, 0.0, 1.0, estimator, level, True, True)
    tau2, converged = estimate_tau2(y, v, estimator, strict)
    w = 1.0 / (v + tau2)
    sw = w.sum()
    mu = float((w * y).sum() / sw)
    se = float(sw ** -0.5)
    z = mu / se
    q, df, i2, h2 = _heterogeneity(y, v, tau2)
    return PooledResult(k, mu, se, mu - zcrit * se, mu + zcrit * se, z, float(2 * stats.norm.sf(abs(z))),
                        float(tau2), q, df, i2, h2, estimator, level, converged, False)


def pool_random_effects(estimates: Sequence[EffectEstimate], estimator: str = "reml", level: float = 0.95) -> PooledResult:
    """Random-effects pooled log risk ratio.

    A single study is returned as is, with ``single_study`` set.
    """
    y, v = _arrays(estimates)
    return _pool_arrays(y, v, estimator, level)


def study_weights(estimates: Sequence[EffectEstimate], tau2: float) -> np.ndarray:
    """Random-effects weights in percent."""
    _, v = _arrays(estimates)
    w = 1.0 / (v + tau2)
    return 100.0 * w / w.sum()


# --------------------------------------------------------------------------
# tau^2 intervals
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Tau2Interval:
    method: str
    low: float
    high: float
    estimate: float
    level: float
    search_bound: float
    grid_steps: Optional[int] = None
    bound_hit: bool = False
    curve: tuple = field(default=(), repr=False)
    peak_loglik: Optional[float] = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["curve"] = [list(p) for p in self.curve]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Tau2Interval":
        d = dict(d)
        d["curve"] = tuple(tuple(p) for p in d.get("curve", ()))
        return cls(**d)


def tau2_ci_qprofile(estimates: Sequence[EffectEstimate], level: float = 0.95, bound: float = 100.0,
                     tol: float = 1e-6, estimator: str = "reml") -> Tau2Interval:
    """Interval from inverting the generalized Q statistic against chi-square quantiles."""
    y, v = _arrays(estimates)
    k = len(y)
    if k < 2:
        raise ValueError("the Q-profile interval needs at least two studies")
    df = k - 1
    alpha = 1.0 - level
    q_lo_crit = stats.chi2.ppf(alpha / 2.0, df)   # gives the upper tau2 bound
    q_hi_crit = stats.chi2.ppf(1.0 - alpha / 2.0, df)  # gives the lower tau2 bound
    est, _ = estimate_tau2(y, v, estimator)

    def solve(target):
        f = lambda t: q_statistic(y, v, t) - target
        if f(0.0) <= 0:
            return 0.0, False
        if f(bound) > 0:
            return bound, True
        return float(optimize.bisect(f, 0.0, bound, xtol=tol)), False

    low, _ = solve(q_hi_crit)
    high, hit = solve(q_lo_crit)
    return Tau2Interval("q_profile", low, high, est, level, bound, None, hit)


def _bisect_crossing(f, a, b, tol):
    # f(a) <= 0 < f(b)
    return float(optimize.bisect(f, a, b, xtol=tol))


def tau2_ci_profile_likelihood(estimates: Sequence[EffectEstimate], steps: int = 50, level: float = 0.95,
                               grid_max: Optional[float] = None, likelihood: str = "reml",
                               tol: float = 1e-8) -> Tau2Interval:
    """Likelihood-ratio interval for tau2 with mu profiled out.

    The likelihood is evaluated on a ``steps``-point grid over
    ``[0, grid_max]`` (default: the Q-profile upper bound) and each crossing of
    the chi-square(1) cut-off is refined by bisection. ``likelihood="reml"``
    profiles the restricted likelihood, ``"ml"`` the full one. The grid values
    are returned in ``curve`` for plotting.
    """
    y, v = _arrays(estimates)
    if len(y) < 2:
        raise ValueError("the likelihood profile needs at least two studies")
    if likelihood == "reml":
        loglik = partial(restricted_loglik, y, v)
        est, _ = tau2_reml(y, v)
    elif likelihood == "ml":
        loglik = partial(ml_loglik, y, v)
        res = optimize.minimize_scalar(lambda t: -loglik(t), bounds=(0.0, max(1.0, 10 * float(np.var(y)))),
                                       method="bounded", options={"xatol": 1e-10})
        est = 0.0 if loglik(0.0) >= loglik(float(res.x)) else float(res.x)
    else:
        raise ValueError("likelihood must be 'reml' or 'ml'")
    lmax = loglik(est)
    if not math.isfinite(lmax):
        raise ValueError("non-finite likelihood")
    crit = stats.chi2.ppf(level, 1)
    stat = lambda t: 2.0 * (lmax - loglik(t)) - crit

    if grid_max is None:
        grid_max = tau2_ci_qprofile(estimates, level).high
    if grid_max <= est:
        grid_max = est + max(1.0, est)
    grid = np.linspace(0.0, grid_max, steps)
    values = np.array([loglik(t) for t in grid])

    bound_hit = False
    above = [i for i, t in enumerate(grid) if t > est and stat(t) > 0]
    if above:
        i = above[0]
        high = _bisect_crossing(stat, max(grid[i - 1], est), grid[i], tol)
    else:
        lo, hi = max(grid[-1], est), 2 * grid[-1]
        for _ in range(30):
            if stat(hi) > 0:
                break
            lo, hi = hi, 2 * hi
        else:
            bound_hit = True
        high = hi if bound_hit else _bisect_crossing(stat, lo, hi, tol)

    if est == 0.0 or stat(0.0) <= 0:
        low = 0.0
    else:
        below = [i for i, t in enumerate(grid) if t < est and stat(t) > 0]
        j = below[-1]
        nxt = min(grid[j + 1], est) if j + 1 < len(grid) else est
        low = _bisect_crossing(lambda t: -stat(t), grid[j], nxt, tol)

    curve = tuple((float(t), float(l)) for t, l in zip(grid, values))
    return Tau2Interval("profile_likelihood", low, high, est, level, float(grid_max), steps, bound_hit, curve,
                       float(lmax))


# --------------------------------------------------------------------------
# leave-one-out and bootstrap
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LooEntry:
    omitted_study_id: str
    result: PooledResult

    def to_dict(self) -> dict:
        return {"omitted_study_id": self.omitted_study_id, "result": self.result.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "LooEntry":
        return cls(d["omitted_study_id"], PooledResult.from_dict(d["result"]))


def leave_one_out(estimates: Sequence[EffectEstimate], estimator: str = "reml", level: float = 0.95) -> list[LooEntry]:
    if len(estimates) < 3:
        raise ValueError("leave-one-out needs at least three studies")
    out = []
    for i, e in enumerate(estimates):
        rest = [x for j, x in enumerate(estimates) if j != i]
        out.append(LooEntry(e.study_id, pool_random_effects(rest, estimator, level)))
    return out


@dataclass(frozen=True)
class BootstrapSummary:
    R: int
    seed: int
    n_failures: int
    mu_hat: float
    bca_low: float
    bca_high: float
    z0: float
    acceleration: float
    level: float
    tau2_zero_share: float

    @property
    def rr_hat(self) -> float:
        return math.exp(self.mu_hat)

    @property
    def rr_low(self) -> float:
        return math.exp(self.bca_low)

    @property
    def rr_high(self) -> float:
        return math.exp(self.bca_high)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(rr_hat=self.rr_hat, rr_low=self.rr_low, rr_high=self.rr_high)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BootstrapSummary":
        names = cls.__dataclass_fields__.keys()
        return cls(**{k: d[k] for k in names})


def _boot_chunk(y, v, estimator, seed, start, stop):
    idx = resampling.resample_indices(seed, start, stop, len(y))
    out = np.full((stop - start, 2), np.nan)
    for r, rows in enumerate(idx):
        try:
            tau2, _ = estimate_tau2(y[rows], v[rows], estimator, strict=True)
        except ConvergenceError:
            continue
        w = 1.0 / (v[rows] + tau2)
        mu = (w * y[rows]).sum() / w.sum()
        if math.isfinite(mu):
            out[r] = (mu, tau2)
    return out


def bootstrap_pool(estimates: Sequence[EffectEstimate], R: int = 10000, seed: int = 0, estimator: str = "reml",
                   level: float = 0.95, n_jobs: int = 1, return_replicates: bool = False):
    """Study-level nonparametric bootstrap of the pooled log risk ratio with a BCa interval.

    Replicates whose refit does not converge are counted in ``n_failures`` and
    dropped; no fallback optimizer is used for them.
    """
    if R < resampling.MIN_REPLICATES:
        raise ValueError(f"R must be at least {resampling.MIN_REPLICATES}")
    y, v = _arrays(estimates)
    k = len(y)
    if k < 2:
        raise ValueError("bootstrap pooling needs at least two studies")
    point = _pool_arrays(y, v, estimator, level)
    reps = resampling.map_replicates(partial(_boot_chunk, y, v, estimator, seed), R, n_jobs)
    ok = ~np.isnan(reps[:, 0])
    if not ok.any():
        raise ConvergenceError("every bootstrap replicate failed")
    mus, taus = reps[ok, 0], reps[ok, 1]
    jack = np.array([_pool_arrays(np.delete(y, i), np.delete(v, i), estimator, level).mu for i in range(k)])
    ci = resampling.bca_interval(mus, point.mu, jack, level)
    summary = BootstrapSummary(R, seed, int(R - ok.sum()), point.mu, ci.low, ci.high, ci.z0, ci.acceleration,
                               level, float(np.mean(taus == 0.0)))
    return (summary, reps) if return_replicates else summary
