import json
import xml.etree.ElementTree as ET

import pytest

from casma import bias, meta, report
from casma.records import PrismaLedger
from casma.report import SofRow, round_half_away, sof_from_ratio


class TestRounding:
    @pytest.mark.parametrize("x,n", [(2.5, 3), (-2.5, -3), (0.5, 1), (-0.5, -1), (1.49, 1), (-82.3, -82)])
    def test_half_away(self, x, n):
        assert round_half_away(x) == n


class TestSof:
    def test_published_row(self):
        row = sof_from_ratio(0.64, 0.48, 0.86, 91, 398)
        assert row.difference_per_1000 == -82
        assert row.difference_ci_per_1000 == (-119, -32)
        assert row.describe() == "82 fewer per 1,000 (from 119 fewer to 32 fewer)"

    def test_rr_one(self):
        assert sof_from_ratio(1.0, 0.8, 1.2, 91, 398).difference_per_1000 == 0

    def test_forced_arithmetic(self):
        row = sof_from_ratio(0.5, 0.4, 0.6, 20, 100)
        assert row.control_risk_per_1000 == 200 and row.difference_per_1000 == -100

    def test_monotone(self):
        d = [sof_from_ratio(rr, rr * 0.8, rr * 1.2, 91, 398).difference_per_1000 for rr in (0.3, 0.5, 0.7, 0.9)]
        assert d == sorted(d)

    def test_rounding_only_at_the_end(self):
        # rounding the two risks first would give 146 - 229 = -83
        row = sof_from_ratio(0.64, 0.48, 0.86, 91, 398)
        assert (row.control_risk_per_1000, row.intervention_risk_per_1000) == (229, 146)
        assert row.difference_per_1000 == -82

    def test_errors(self):
        with pytest.raises(ValueError):
            sof_from_ratio(0.6, 0.5, 0.7, 0, 0)
        with pytest.raises(ValueError):
            sof_from_ratio(0.6, 0.7, 0.5, 1, 10)

    def test_from_pooled(self, estimates):
        p = meta.pool_random_effects(estimates)
        row = report.sof_absolute_effects(p, 91, 398)
        assert row.difference_per_1000 == -82
        assert SofRow.from_dict(json.loads(json.dumps(row.to_dict()))) == row


@pytest.fixture(scope="module")
def document(estimates):
    pooled = meta.pool_random_effects(estimates)
    ledger = PrismaLedger()
    ledger.add_stage("identification", 30, 2, "unreadable rows: 2")
    ledger.add_stage("regex pre-screening", 28, 10, "excluded by rule: 10")
    plot = bias.doi_plot(estimates)
    return report.report_document(
        pooled, estimates, ledger, plot, bias.lfk_index(plot),
        [meta.tau2_ci_qprofile(estimates), meta.tau2_ci_profile_likelihood(estimates)],
        meta.leave_one_out(estimates), report.sof_absolute_effects(pooled, 91, 398), None, 7,
    )


class TestRender:
    def test_forest_weights(self, document):
        assert sum(r["weight"] for r in document["forest"]) == pytest.approx(100.0, abs=0.1)

    def test_prisma_pass_through(self, document):
        stages = document["prisma"]["stages"]
        assert [(s["records_in"], s["records_excluded"]) for s in stages] == [(30, 2), (28, 10)]

    def test_all_formats(self, document, tmp_path):
        written = report.render_reports(document, tmp_path, report.FORMATS)
        names = {p.name for p in written}
        assert {"report.json", "report.md", "forest.csv", "prisma.csv", "leave_one_out.csv", "forest.svg",
                "doi.svg", "tau2_profile.svg", "prisma.svg"} <= names
        for p in written:
            if p.suffix == ".svg":
                root = ET.parse(p).getroot()
                assert root.tag.endswith("svg")
        assert report.read_report(tmp_path / "report.json") == json.loads(json.dumps(document))

    def test_json_structural_round_trip(self, document, tmp_path):
        report.render_reports(document, tmp_path, ["json"])
        back = report.read_report(tmp_path / "report.json")
        p = meta.PooledResult.from_dict(back["pooled"])
        assert p.to_dict() == document["pooled"]
        assert [meta.Tau2Interval.from_dict(t).to_dict() for t in back["tau2_intervals"]] == document["tau2_intervals"]

    def test_svg_deterministic(self, document, tmp_path):
        report.render_reports(document, tmp_path / "a", ["svg"])
        report.render_reports(document, tmp_path / "b", ["svg"])
        for name in ("forest.svg", "doi.svg", "tau2_profile.svg", "prisma.svg"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_markdown_content(self, document, tmp_path):
        report.render_reports(document, tmp_path, ["markdown"])
        md = (tmp_path / "report.md").read_text()
        assert "RR 0.64 (0.48, 0.86)" in md and "82 fewer per 1,000" in md and "LFK index -0.113" in md

    def test_unwritable(self, document, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(report.ReportError):
            report.render_reports(document, blocker / "sub", ["json"])

    def test_unknown_format(self, document, tmp_path):
        with pytest.raises(ValueError):
            report.render_reports(document, tmp_path, ["pdf"])
