"""Inter-rater agreement on the three-point screening scale."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import partial
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import resampling

SCALE = (-1, 0, 1)
# 1 - |i - j| / (k - 1) on the ordered categories
LINEAR_WEIGHTS = 1.0 - np.abs(np.subtract.outer(np.arange(3), np.arange(3))) / 2.0


class UndefinedKappaError(ValueError):
    """Both raters put every item in the same single category."""


@dataclass(frozen=True)
class GradeSheet:
    record_ids: tuple[str, ...]
    grades: np.ndarray  # (n, 2) ints on SCALE
    reviewers: tuple[str, str] = ("reviewer_1", "reviewer_2")

    def __post_init__(self):
        g = np.asarray(self.grades)
        if g.ndim != 2 or g.shape[1] != 2 or g.shape[0] != len(self.record_ids):
            raise ValueError("grades must be an (n, 2) array matching record_ids")
        if len(set(self.record_ids)) != len(self.record_ids):
            raise ValueError("record ids must be unique")
        if not np.isin(g, SCALE).all():
            bad = sorted(set(g[~np.isin(g, SCALE)].tolist()))
            raise ValueError(f"grades outside the scale {SCALE}: {bad}")

    @classmethod
    def from_rows(cls, rows: Iterable[tuple[str, int, int]], reviewers=("reviewer_1", "reviewer_2")) -> "GradeSheet":
        rows = list(rows)
        ids = tuple(str(r[0]) for r in rows)
        g = np.array([[int(r[1]), int(r[2])] for r in rows], dtype=np.int64).reshape(-1, 2)
        return cls(ids, g, tuple(reviewers))

    @classmethod
    def from_long_csv(cls, path) -> "GradeSheet":
        """Read ``record_id, reviewer, grade`` rows for exactly two reviewers."""
        grades: dict[str, dict[str, int]] = {}
        reviewers: list[str] = []
        with Path(path).open(encoding="utf-8", newline="") as fh:
            for lineno, row in enumerate(csv.DictReader(fh), start=2):
                try:
                    rid, who, g = row["record_id"].strip(), row["reviewer"].strip(), int(row["grade"])
                except (KeyError, AttributeError, TypeError, ValueError) as exc:
                    raise ValueError(f"{path}:{lineno}: malformed grade row") from exc
                if who not in reviewers:
                    reviewers.append(who)
                if who in grades.setdefault(rid, {}):
                    raise ValueError(f"{path}:{lineno}: {who} graded {rid} twice")
                grades[rid][who] = g
        if len(reviewers) != 2:
            raise ValueError(f"{path}: expected exactly two reviewers, found {reviewers}")
        missing = [rid for rid, d in grades.items() if len(d) != 2]
        if missing:
            raise ValueError(f"{path}: records not graded by both reviewers: {missing}")
        rows = [(rid, d[reviewers[0]], d[reviewers[1]]) for rid, d in grades.items()]
        return cls.from_rows(rows, reviewers)

    @property
    def n_items(self) -> int:
        return len(self.record_ids)


@dataclass(frozen=True)
class KappaResult:
    kappa: float
    observed_agreement: float
    expected_agreement: float
    concordance: int
    n_items: int

    @property
    def concordance_fraction(self) -> float:
        return self.concordance / self.n_items


def _category_index(grades: np.ndarray) -> np.ndarray:
    return np.asarray(grades, dtype=np.int64) + 1


def _kappa_from_codes(codes: np.ndarray) -> tuple[float, float, float]:
    n = codes.shape[0]
    po = LINEAR_WEIGHTS[codes[:, 0], codes[:, 1]].mean()
    p1 = np.bincount(codes[:, 0], minlength=3) / n
    p2 = np.bincount(codes[:, 1], minlength=3) / n
    pe = p1 @ LINEAR_WEIGHTS @ p2
    if np.isclose(pe, 1.0, rtol=0, atol=1e-12):
        raise UndefinedKappaError("expected agreement is 1; kappa is undefined")
    return (po - pe) / (1.0 - pe), po, pe


def weighted_absolute_kappa(sheet: GradeSheet) -> KappaResult:
    """Linear-weight (absolute distance) kappa for two raters on the 3-point scale."""
    if sheet.n_items < 2:
        raise ValueError("at least two graded items are required")
    codes = _category_index(sheet.grades)
    kappa, po, pe = _kappa_from_codes(codes)
    concordant = int((codes[:, 0] == codes[:, 1]).sum())
    return KappaResult(float(kappa), float(po), float(pe), concordant, sheet.n_items)


def _batch_kappa(codes: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Kappa for each row of resample indices; NaN where undefined."""
    r1 = codes[idx, 0]
    r2 = codes[idx, 1]
    n = idx.shape[1]
    po = LINEAR_WEIGHTS[r1, r2].mean(axis=1)
    p1 = np.stack([(r1 == c).sum(axis=1) for c in range(3)], axis=1) / n
    p2 = np.stack([(r2 == c).sum(axis=1) for c in range(3)], axis=1) / n
    pe = np.einsum("ri,ij,rj->r", p1, LINEAR_WEIGHTS, p2)
    out = np.full(idx.shape[0], np.nan)
    ok = ~np.isclose(pe, 1.0, rtol=0, atol=1e-12)
    out[ok] = (po[ok] - pe[ok]) / (1.0 - pe[ok])
    return out


def _replicate_chunk(codes: np.ndarray, seed: int, start: int, stop: int) -> np.ndarray:
    idx = resampling.resample_indices(seed, start, stop, codes.shape[0])
    return _batch_kappa(codes, idx)


@dataclass(frozen=True)
class BootstrapKappa:
    replications: int
    seed: int
    kappa: float
    ci_low: float
    ci_high: float
    skewness: float
    excess_kurtosis: float
    mean: float
    median: float
    n_failures: int
    z0: float
    acceleration: float
    level: float = 0.95


def bootstrap_kappa(sheet: GradeSheet, R: int = 2000, seed: int = 0, level: float = 0.95, n_jobs: int = 1,
                    return_replicates: bool = False):
    """Nonparametric row bootstrap of the weighted kappa with a BCa interval.

    Replicates with undefined kappa are dropped and counted in ``n_failures``.
    With ``return_replicates`` the valid replicate values are returned too.
    """
    if R < resampling.MIN_REPLICATES:
        raise ValueError(f"R must be at least {resampling.MIN_REPLICATES}")
    point = weighted_absolute_kappa(sheet).kappa
    codes = _category_index(sheet.grades)
    reps = resampling.map_replicates(partial(_replicate_chunk, codes, seed), R, n_jobs)
    valid = reps[~np.isnan(reps)]
    if valid.size == 0:
        raise ValueError("every bootstrap replicate had an undefined kappa")
    n = sheet.n_items
    jack = []
    for i in range(n):
        keep = np.delete(np.arange(n), i)
        try:
            jack.append(_kappa_from_codes(codes[keep])[0])
        except UndefinedKappaError:
            continue
    ci = resampling.bca_interval(valid, point, np.array(jack), level)
    skew, kurt = resampling.shape_moments(valid)
    result = BootstrapKappa(
        replications=R, seed=seed, kappa=point, ci_low=ci.low, ci_high=ci.high,
        skewness=skew, excess_kurtosis=kurt, mean=float(valid.mean()), median=float(np.median(valid)),
        n_failures=int(R - valid.size), z0=ci.z0, acceleration=ci.acceleration, level=level,
    )
    return (result, valid) if return_replicates else result


def kappa_summary(sheet: GradeSheet, boot: BootstrapKappa) -> dict:
    k = weighted_absolute_kappa(sheet)
    return {
        "reviewers": list(sheet.reviewers),
        "n_items": k.n_items,
        "concordance": k.concordance,
        "concordance_fraction": k.concordance_fraction,
        "kappa": k.kappa,
        "observed_agreement": k.observed_agreement,
        "expected_agreement": k.expected_agreement,
        "bootstrap": {
            "replications": boot.replications,
            "seed": boot.seed,
            "level": boot.level,
            "ci_low": boot.ci_low,
            "ci_high": boot.ci_high,
            "skewness": boot.skewness,
            "excess_kurtosis": boot.excess_kurtosis,
            "mean": boot.mean,
            "median": boot.median,
            "n_failures": boot.n_failures,
            "z0": boot.z0,
            "acceleration": boot.acceleration,
        },
    }
