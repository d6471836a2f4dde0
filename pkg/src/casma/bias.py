"""Doi plot and LFK index for small-study asymmetry."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .effects import EffectEstimate


@dataclass(frozen=True)
class DoiPoint:
    study_id: str
    effect: float
    percentile: float
    abs_z: float


@dataclass(frozen=True)
class DoiPlot:
    points: tuple[DoiPoint, ...]
    apex_index: int

    @property
    def effects(self) -> np.ndarray:
        return np.array([p.effect for p in self.points])

    @property
    def abs_z(self) -> np.ndarray:
        return np.array([p.abs_z for p in self.points])

    def to_dict(self) -> dict:
        return {"apex_index": self.apex_index, "points": [asdict(p) for p in self.points]}

    @classmethod
    def from_dict(cls, d: dict) -> "DoiPlot":
        return cls(tuple(DoiPoint(**p) for p in d["points"]), int(d["apex_index"]))


@dataclass(frozen=True)
class LfkResult:
    index: float
    classification: str
    empty_limb: bool = False


def classify_lfk(index: float) -> str:
    a = abs(index)
    if a <= 1.0:
        return "no_asymmetry"
    if a <= 2.0:
        return "minor"
    return "major"


def doi_plot(estimates: Sequence[EffectEstimate]) -> DoiPlot:
    """Rank effects, map mid-rank percentiles ``(r - 0.5)/k`` to |z|.

    Tied effects share their average rank. Points are ordered by effect (ties
    keep input order) and the apex is the first point with the smallest |z|.
    """
    k = len(estimates)
    if k < 3:
        raise ValueError("a Doi plot needs at least three studies")
    y = np.array([e.yi for e in estimates], dtype=float)
    order = np.argsort(y, kind="stable")
    ranks = stats.rankdata(y)
    pct = (ranks - 0.5) / k
    absz = np.abs(stats.norm.ppf(pct))
    points = tuple(DoiPoint(estimates[i].study_id, float(y[i]), float(pct[i]), float(absz[i])) for i in order)
    sorted_z = absz[order]
    apex = int(np.flatnonzero(sorted_z == sorted_z.min())[0])
    return DoiPlot(points, apex)


def lfk_index(plot: DoiPlot) -> LfkResult:
    """Signed asymmetry of the two Doi-plot limbs.

    Effects are rescaled to [0, 1] by their range; each point contributes its
    |z| times its signed distance from the apex, and the sum is scaled by
    5/(2k). A heavier left (smaller-effect) limb gives a negative index.

    With an even number of distinct ranks the two central points share the
    smallest |z|; distances are then taken from their midpoint, which keeps
    the index antisymmetric under mirroring.
    """
    x = plot.effects
    z = plot.abs_z
    k = len(x)
    span = x.max() - x.min()
    if span == 0:
        return LfkResult(0.0, "no_asymmetry", False)
    xn = (x - x.min()) / span
    tied = np.isclose(z, z[plot.apex_index], rtol=0, atol=1e-12)
    d = xn - xn[tied].mean()
    index = float(5.0 / (2.0 * k) * (z * d).sum())
    empty = not (d < 0).any() or not (d > 0).any()
    return LfkResult(index, classify_lfk(index), empty)
