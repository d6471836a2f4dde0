import json

import pytest

from casma import records, screen
from casma.records import PrismaLedger, Record


def rec(title, abstract=None, n=None):
    return Record.build(source="manual", title=title, abstract=abstract, native_id=n or title)


@pytest.fixture(scope="module")
def rules():
    return screen.default_ruleset()


class TestCompile:
    def test_empty_ruleset_sends_everything_to_review(self):
        rs = screen.ruleset_from_dict({"include": [], "exclude": []})
        d = screen.screen_record(rec("anything"), rs)
        assert d.status == "needs_review" and d.matched_rules == ()

    def test_bad_pattern_names_rule(self, tmp_path):
        p = tmp_path / "r.json"
        p.write_text(json.dumps({"include": [{"name": "broken", "pattern": "(abc"}]}))
        with pytest.raises(screen.RuleError, match="broken.*position"):
            screen.compile_ruleset(p)

    def test_duplicate_names(self):
        doc = {"include": [{"name": "x", "pattern": "a"}], "exclude": [{"name": "x", "pattern": "b"}]}
        with pytest.raises(screen.RuleError, match="duplicate"):
            screen.ruleset_from_dict(doc)

    def test_unknown_field(self):
        with pytest.raises(screen.RuleError, match="fields"):
            screen.ruleset_from_dict({"include": [{"name": "x", "pattern": "a", "fields": ["journal"]}]})

    def test_not_json(self, tmp_path):
        p = tmp_path / "r.json"
        p.write_text("{")
        with pytest.raises(screen.RuleError):
            screen.compile_ruleset(p)

    def test_default_targets(self, rules):
        assert {r.name for r in rules.exclude_rules} == {"network_meta_analysis", "bayesian", "adenomyosis"}
        assert len(rules.include_rules) == 1 and rules.case_insensitive


class TestDecisions:
    def test_network_meta_analysis_excluded(self, rules):
        d = screen.screen_record(rec("A network meta-analysis of GnRH agonists"), rules)
        assert d.status == "excluded" and "network_meta_analysis" in d.matched_rules

    def test_adenomyosis_excluded(self, rules):
        assert screen.screen_record(rec("Dienogest for Adenomyosis"), rules).status == "excluded"

    def test_bayesian_in_abstract(self, rules):
        d = screen.screen_record(rec("Hormonal therapy for endometriosis", "A Bayesian randomized trial."), rules)
        assert d.matched_rules == ("bayesian",)

    def test_shortlisted_across_fields(self, rules):
        r = rec("GnRH agonist after surgery for endometriosis", "A randomized controlled trial of 100 women.")
        d = screen.screen_record(r, rules)
        assert d.status == "shortlisted" and d.matched_rules == ("endometriosis_hormonal_trial_or_ma",)

    def test_title_only_path(self, rules):
        r = rec("Quality of life after laparoscopy")
        assert r.abstract is None
        assert screen.screen_record(r, rules).status == "needs_review"

    def test_exclusion_precedence(self, rules):
        r = rec("Network meta-analysis of hormonal treatment of endometriosis: randomized trials")
        assert screen.screen_record(r, rules).status == "excluded"

    def test_excluded_implies_exclude_rule(self, rules, data_dir):
        recs = records.import_records(data_dir / "records.jsonl").records
        names = {r.name for r in rules.exclude_rules}
        for d in screen.screen_corpus(recs, rules)[0]:
            if d.status == "excluded":
                assert set(d.matched_rules) <= names and d.matched_rules


class TestCorpus:
    def test_counts_and_ledger(self, rules, data_dir):
        recs = records.import_records(data_dir / "records.jsonl").records
        led = PrismaLedger()
        led.add_stage("identification", len(recs), 0)
        decisions, new = screen.screen_corpus(recs, rules, led)
        assert len(led.stages) == 1  # input ledger untouched
        stage = new.stages[-1]
        assert stage.records_in == len(recs) == len(decisions)
        assert stage.records_excluded == sum(d.status == "excluded" for d in decisions)

    def test_order_independent(self, rules, data_dir):
        recs = records.import_records(data_dir / "records.jsonl").records
        a = {d.record_id: d for d in screen.screen_corpus(recs, rules)[0]}
        b = {d.record_id: d for d in screen.screen_corpus(recs[::-1], rules)[0]}
        assert a == b

    def test_decisions_round_trip(self, rules, data_dir, tmp_path):
        recs = records.import_records(data_dir / "records.jsonl").records
        decisions, _ = screen.screen_corpus(recs, rules)
        screen.write_decisions(decisions, tmp_path / "d.jsonl")
        assert screen.read_decisions(tmp_path / "d.jsonl") == decisions
