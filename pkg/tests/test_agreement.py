import numpy as np
import pytest

from casma import resampling
from casma.agreement import GradeSheet, UndefinedKappaError, bootstrap_kappa, kappa_summary, weighted_absolute_kappa


def sheet(rows):
    return GradeSheet.from_rows([(f"r{i}", a, b) for i, (a, b) in enumerate(rows)])


class TestKappa:
    def test_round1_fixture(self, round1_sheet):
        k = weighted_absolute_kappa(round1_sheet)
        assert k.n_items == 29 and k.concordance == 24
        assert k.kappa == pytest.approx(0.6844, abs=5e-4)
        assert round1_sheet.reviewers == ("MS", "ST")

    def test_four_item_hand_oracle(self):
        # codes (2,2),(2,1),(1,0),(0,0): weights 1, .5, .5, 1 -> Po = .75
        # marginals (.25,.25,.5) and (.5,.25,.25) -> Pe = .15625 + .15625 + .1875 = .5
        k = weighted_absolute_kappa(sheet([(1, 1), (1, 0), (0, -1), (-1, -1)]))
        assert k.observed_agreement == pytest.approx(0.75)
        assert k.expected_agreement == pytest.approx(0.5)
        assert k.kappa == pytest.approx(0.5)
        assert k.concordance == 2

    def test_binary_scale_equals_cohen(self):
        rows = [(1, 1), (1, 1), (1, -1), (-1, -1), (-1, 1), (-1, -1)]
        # Cohen: po = 4/6, pe = .5*.5 + .5*.5 = .5 -> 1/3
        assert weighted_absolute_kappa(sheet(rows)).kappa == pytest.approx(1 / 3)

    def test_identical_columns(self):
        assert weighted_absolute_kappa(sheet([(1, 1), (0, 0), (-1, -1)])).kappa == pytest.approx(1.0)

    def test_degenerate_marginals(self):
        with pytest.raises(UndefinedKappaError):
            weighted_absolute_kappa(sheet([(1, 1), (1, 1)]))

    def test_validation(self):
        with pytest.raises(ValueError, match="scale"):
            sheet([(2, 1), (0, 0)])
        with pytest.raises(ValueError, match="unique"):
            GradeSheet.from_rows([("a", 1, 1), ("a", 0, 0)])
        with pytest.raises(ValueError):
            weighted_absolute_kappa(sheet([(1, 0)]))

    def test_reviewer_swap(self, round1_sheet):
        swapped = GradeSheet(round1_sheet.record_ids, round1_sheet.grades[:, ::-1])
        assert weighted_absolute_kappa(swapped).kappa == pytest.approx(weighted_absolute_kappa(round1_sheet).kappa,
                                                                       abs=1e-15)

    def test_bounds(self, round1_sheet):
        k = weighted_absolute_kappa(round1_sheet)
        assert 0 <= k.expected_agreement <= 1 and 0 <= k.observed_agreement <= 1 and k.kappa <= 1


class TestLongCsv:
    def test_three_reviewers_rejected(self, tmp_path):
        p = tmp_path / "g.csv"
        p.write_text("record_id,reviewer,grade\na,X,1\na,Y,1\na,Z,0\n")
        with pytest.raises(ValueError, match="two reviewers"):
            GradeSheet.from_long_csv(p)

    def test_missing_grade_rejected(self, tmp_path):
        p = tmp_path / "g.csv"
        p.write_text("record_id,reviewer,grade\na,X,1\na,Y,1\nb,X,0\n")
        with pytest.raises(ValueError, match="both reviewers"):
            GradeSheet.from_long_csv(p)

    def test_bad_grade_line(self, tmp_path):
        p = tmp_path / "g.csv"
        p.write_text("record_id,reviewer,grade\na,X,yes\n")
        with pytest.raises(ValueError, match=":2:"):
            GradeSheet.from_long_csv(p)


class TestBootstrap:
    def test_deterministic(self, round1_sheet):
        a = bootstrap_kappa(round1_sheet, 300, seed=5)
        b = bootstrap_kappa(round1_sheet, 300, seed=5)
        assert a == b

    def test_parallel_matches_serial(self, round1_sheet):
        a, ra = bootstrap_kappa(round1_sheet, 400, seed=9, return_replicates=True)
        b, rb = bootstrap_kappa(round1_sheet, 400, seed=9, n_jobs=3, return_replicates=True)
        np.testing.assert_array_equal(ra, rb)
        assert a == b

    def test_ci_brackets_point(self, round1_sheet):
        b = bootstrap_kappa(round1_sheet, 500, seed=1)
        assert b.ci_low <= b.kappa <= b.ci_high
        assert b.n_failures + 0 <= b.replications

    def test_seed_noise_small(self, round1_sheet):
        a = bootstrap_kappa(round1_sheet, 2000, seed=1)
        b = bootstrap_kappa(round1_sheet, 2000, seed=2)
        assert abs(a.ci_low - b.ci_low) < 0.03 and abs(a.ci_high - b.ci_high) < 0.03

    def test_min_replicates(self, round1_sheet):
        with pytest.raises(ValueError, match="at least"):
            bootstrap_kappa(round1_sheet, 50)

    def test_identical_columns_error_path(self):
        s = sheet([(1, 1), (0, 0), (-1, -1), (1, 1)])
        with pytest.raises(ValueError):
            bootstrap_kappa(s, 200, seed=0)

    def test_summary_keys(self, round1_sheet):
        b = bootstrap_kappa(round1_sheet, 200, seed=0)
        d = kappa_summary(round1_sheet, b)
        assert d["concordance"] == 24 and d["bootstrap"]["replications"] == 200


class TestResampling:
    def test_substreams_independent_of_chunking(self):
        whole = resampling.resample_indices(3, 0, 10, 7)
        parts = np.vstack([resampling.resample_indices(3, 0, 4, 7), resampling.resample_indices(3, 4, 10, 7)])
        np.testing.assert_array_equal(whole, parts)

    def test_bca_reduces_to_percentile(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=20001)
        point = float(np.median(x))
        ci = resampling.bca_interval(x, point, np.array([1.0, 1.0, 1.0]), 0.90)
        assert ci.acceleration == 0.0 and abs(ci.z0) < 0.02
        assert ci.low == pytest.approx(np.quantile(x, 0.05), abs=0.02)
        assert ci.high == pytest.approx(np.quantile(x, 0.95), abs=0.02)

    def test_degenerate(self):
        with pytest.raises(ValueError):
            resampling.bca_interval(np.ones(10), 1.0, np.ones(3))

    def test_shape_moments_hand(self):
        x = np.array([0.0, 0.0, 0.0, 1.0])
        # m2 = 3/16, m3 = 3/32 -> skew = (3/32)/(3/16)^1.5
        skew, _ = resampling.shape_moments(x)
        assert skew == pytest.approx((3 / 32) / (3 / 16) ** 1.5)
