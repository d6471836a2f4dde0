"""Regular-expression pre-screening with exclude-before-include precedence."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

from .records import PrismaLedger, Record

FIELDS = ("title", "abstract")
STATUSES = ("shortlisted", "excluded", "needs_review")


class RuleError(ValueError):
    pass


@dataclass(frozen=True)
class Rule:
    name: str
    pattern: re.Pattern
    fields: tuple[str, ...] = FIELDS

    def matches(self, record: Record) -> bool:
        # listed fields are searched as one text so conjunctive patterns can
        # take terms from title and abstract alike; a missing abstract drops out
        text = "\n".join(t for t in (getattr(record, f) for f in self.fields) if t)
        return bool(text) and self.pattern.search(text) is not None


@dataclass(frozen=True)
class RuleSet:
    include_rules: tuple[Rule, ...] = ()
    exclude_rules: tuple[Rule, ...] = ()
    case_insensitive: bool = True


@dataclass(frozen=True)
class ScreenDecision:
    record_id: str
    status: str
    matched_rules: tuple[str, ...] = field(default_factory=tuple)

    def to_dict(self) -> dict:
        return {"record_id": self.record_id, "status": self.status, "matched_rules": list(self.matched_rules)}

    @classmethod
    def from_dict(cls, d: dict) -> "ScreenDecision":
        return cls(d["record_id"], d["status"], tuple(d.get("matched_rules", ())))


def _compile_rule(entry: dict, kind: str, flags: int) -> Rule:
    name = entry.get("name")
    if not name:
        raise RuleError(f"{kind} rule without a name: {entry!r}")
    try:
        pattern = re.compile(entry["pattern"], flags)
    except KeyError:
        raise RuleError(f"rule {name!r} has no pattern") from None
    except re.error as exc:
        raise RuleError(f"rule {name!r}: invalid pattern at position {exc.pos}: {exc.msg}") from exc
    fields = tuple(entry.get("fields") or FIELDS)
    bad = [f for f in fields if f not in FIELDS]
    if bad:
        raise RuleError(f"rule {name!r}: unknown fields {bad}")
    return Rule(name, pattern, fields)


def ruleset_from_dict(doc: dict) -> RuleSet:
    ci = bool(doc.get("case_insensitive", True))
    flags = re.DOTALL | (re.IGNORECASE if ci else 0)
    include = tuple(_compile_rule(r, "include", flags) for r in doc.get("include", []))
    exclude = tuple(_compile_rule(r, "exclude", flags) for r in doc.get("exclude", []))
    seen = set()
    for r in include + exclude:
        if r.name in seen:
            raise RuleError(f"duplicate rule name {r.name!r}")
        seen.add(r.name)
    return RuleSet(include, exclude, ci)


def compile_ruleset(path) -> RuleSet:
    """Load and validate a JSON rule file with ``include``/``exclude`` arrays."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise RuleError(f"{path}: not valid JSON ({exc.msg})") from exc
    if not isinstance(doc, dict):
        raise RuleError(f"{path}: expected a JSON object")
    return ruleset_from_dict(doc)


def default_rules_path() -> Path:
    return Path(str(resources.files("casma") / "data" / "rules.json"))


def default_ruleset() -> RuleSet:
    return compile_ruleset(default_rules_path())


def screen_record(record: Record, rules: RuleSet) -> ScreenDecision:
    excluded = tuple(r.name for r in rules.exclude_rules if r.matches(record))
    if excluded:
        return ScreenDecision(record.id, "excluded", excluded)
    included = tuple(r.name for r in rules.include_rules if r.matches(record))
    if included:
        return ScreenDecision(record.id, "shortlisted", included)
    return ScreenDecision(record.id, "needs_review", ())


def screen_corpus(records: Sequence[Record], rules: RuleSet, ledger: Optional[PrismaLedger] = None,
                  stage_name: str = "regex pre-screening"):
    """Screen every record and append one ledger stage.

    Excluded records leave the flow at this stage; shortlisted and
    needs-review records both go on to human screening. Returns
    ``(decisions, ledger)`` where the ledger is a new object.
    """
    decisions = [screen_record(r, rules) for r in records]
    counts = {s: 0 for s in STATUSES}
    for d in decisions:
        counts[d.status] += 1
    ledger = ledger.copy() if ledger is not None else PrismaLedger()
    ledger.add_stage(
        stage_name,
        len(records),
        counts["excluded"],
        f"excluded by rule: {counts['excluded']}; shortlisted: {counts['shortlisted']}; "
        f"needs review: {counts['needs_review']}",
    )
    return decisions, ledger


def write_decisions(decisions, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for d in decisions:
            fh.write(json.dumps(d.to_dict()) + "\n")


def read_decisions(path) -> list[ScreenDecision]:
    with Path(path).open(encoding="utf-8") as fh:
        return [ScreenDecision.from_dict(json.loads(line)) for line in fh if line.strip()]
