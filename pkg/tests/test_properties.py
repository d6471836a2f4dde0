"""Property-based invariants; runnable on their own with ``pytest tests/test_properties.py``."""

import numpy as np
import pytest
from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st

from casma import bias, dedup, meta
from casma.agreement import GradeSheet, UndefinedKappaError, bootstrap_kappa, weighted_absolute_kappa
from casma.effects import ArmCount, EffectEstimate, log_risk_ratio, split_control

pytestmark = pytest.mark.properties


@st.composite
def arms(draw):
    total = draw(st.integers(1, 500))
    return ArmCount(draw(st.integers(0, total)), total)


finite = st.floats(-3, 3, allow_nan=False, allow_infinity=False)
variances = st.floats(0.005, 2.0, allow_nan=False)
# a coarse grid keeps distinct effects distinct after shifting, so ties are preserved exactly
grid = st.integers(-3000, 3000).map(lambda i: i / 1000)


@st.composite
def effect_sets(draw, min_size=2, max_size=12, values=finite):
    n = draw(st.integers(min_size, max_size))
    return [EffectEstimate(f"s{i}", draw(values), draw(variances)) for i in range(n)]


class TestLogRR:
    @given(arms(), arms())
    def test_antisymmetric_under_arm_swap(self, a, b):
        ab = log_risk_ratio(a, b)
        ba = log_risk_ratio(b, a)
        assert ba.yi == pytest.approx(-ab.yi, abs=1e-12)
        assert ba.vi == pytest.approx(ab.vi, rel=1e-12)
        assert ab.corrected == ba.corrected


class TestSplitControl:
    @given(arms(), st.integers(1, 1000), st.integers(1, 1000))
    def test_floor(self, control, arm_total, extra):
        all_total = arm_total + extra - 1
        try:
            part = split_control(control, arm_total, all_total)
        except ValueError:
            assert control.total * arm_total < all_total
            return
        assert part.total == control.total * arm_total // all_total
        assert part.events == control.events * arm_total // all_total
        assert part.events <= control.events * arm_total / all_total < part.events + 1

    @given(arms(), st.integers(1, 500), st.integers(1, 500), st.integers(0, 500))
    def test_monotone_in_arm_size(self, control, a, b, extra):
        lo, hi = sorted((a, b))
        all_total = hi + extra
        assume(control.total * lo >= all_total)
        small = split_control(control, lo, all_total)
        big = split_control(control, hi, all_total)
        assert small.events <= big.events and small.total <= big.total


titles = st.lists(st.text(alphabet="abcde -", min_size=0, max_size=12), min_size=2, max_size=7)


class TestDedup:
    @given(titles, st.integers(1, 10), st.integers(0, 5))
    def test_threshold_monotone(self, ts, t, step):
        low = {(i, j) for i, j, _ in dedup.find_duplicate_pairs(ts, t)}
        high = {(i, j) for i, j, _ in dedup.find_duplicate_pairs(ts, t + step)}
        assert low <= high

    @given(st.text(max_size=15), st.text(max_size=15), st.integers(0, 20))
    def test_bounded_agrees_with_full(self, a, b, limit):
        d = dedup.levenshtein(a, b)
        got = dedup.bounded_levenshtein(a, b, limit)
        assert got == (d if d <= limit else None)


grade_rows = st.lists(st.tuples(st.sampled_from((-1, 0, 1)), st.sampled_from((-1, 0, 1))), min_size=2, max_size=40)


class TestKappa:
    @given(grade_rows, st.randoms(use_true_random=False))
    def test_permutation_invariant(self, rows, rnd):
        sheet = GradeSheet.from_rows([(f"r{i}", a, b) for i, (a, b) in enumerate(rows)])
        try:
            k = weighted_absolute_kappa(sheet).kappa
        except UndefinedKappaError:
            return
        order = list(range(len(rows)))
        rnd.shuffle(order)
        shuffled = GradeSheet(tuple(sheet.record_ids[i] for i in order), sheet.grades[order])
        assert weighted_absolute_kappa(shuffled).kappa == pytest.approx(k, abs=1e-12)

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_bootstrap_seed_determinism(self, seed):
        rows = [(1, 1), (1, 0), (0, 0), (-1, -1), (0, 1), (-1, 0), (1, 1), (0, 0), (-1, -1), (1, -1)]
        sheet = GradeSheet.from_rows([(f"r{i}", a, b) for i, (a, b) in enumerate(rows)])
        assert bootstrap_kappa(sheet, 150, seed) == bootstrap_kappa(sheet, 150, seed)


class TestMeta:
    @given(effect_sets())
    def test_re_equals_fe_at_zero_tau2(self, es):
        y = np.array([e.yi for e in es])
        v = np.array([e.vi for e in es])
        w = 1 / v
        fe = float((w * y).sum() / w.sum())
        fe_se = float(np.sqrt(1 / w.sum()))
        p = meta._pool_arrays(y, v, "reml")
        assume(p.tau2 == 0.0)
        assert p.mu == pytest.approx(fe, rel=1e-10, abs=1e-12)
        assert p.se_mu == pytest.approx(fe_se, rel=1e-10)

    @given(st.lists(st.tuples(st.floats(-0.05, 0.05), variances), min_size=2, max_size=8))
    def test_homogeneous_sets_reach_zero_tau2(self, pairs):
        # effects spread far less than their sampling error: DL truncates at zero and RE collapses to FE
        es = [EffectEstimate(f"s{i}", y * 0.01, v + 0.5) for i, (y, v) in enumerate(pairs)]
        assert meta.heterogeneity_stats(es, "dl").tau2 == 0.0
        w = np.array([1 / e.vi for e in es])
        fe = float((w * np.array([e.yi for e in es])).sum() / w.sum())
        assert meta.pool_random_effects(es, "dl").mu == pytest.approx(fe, rel=1e-10, abs=1e-14)

    @settings(max_examples=5, deadline=None, suppress_health_check=[HealthCheck.too_slow])
    @given(st.integers(0, 2**32 - 1))
    def test_bootstrap_seed_determinism(self, seed):
        es = [EffectEstimate("a", -0.5, 0.06), EffectEstimate("b", -0.2, 0.1), EffectEstimate("c", 0.1, 0.2),
              EffectEstimate("d", -0.9, 0.3)]
        assert meta.bootstrap_pool(es, 120, seed) == meta.bootstrap_pool(es, 120, seed)


class TestLfk:
    @given(effect_sets(min_size=3, max_size=15, values=grid))
    def test_antisymmetric_under_mirroring(self, es):
        ys = [e.yi for e in es]
        assume(max(ys) - min(ys) > 1e-6)
        got = bias.lfk_index(bias.doi_plot(es)).index
        mirrored = [EffectEstimate(e.study_id, -e.yi, e.vi) for e in es]
        assert bias.lfk_index(bias.doi_plot(mirrored)).index == pytest.approx(-got, abs=1e-9)

    @given(effect_sets(min_size=3, max_size=15, values=grid), grid, st.floats(0.1, 10))
    def test_affine_invariant(self, es, shift, scale):
        ys = [e.yi for e in es]
        assume(max(ys) - min(ys) > 1e-6)
        got = bias.lfk_index(bias.doi_plot(es)).index
        moved = [EffectEstimate(e.study_id, e.yi * scale + shift, e.vi) for e in es]
        assert bias.lfk_index(bias.doi_plot(moved)).index == pytest.approx(got, abs=1e-7)
