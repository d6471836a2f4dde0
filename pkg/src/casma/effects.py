"""Per-trial arm counts to log risk ratios.

Counts are taken as analysed: patients lost to follow-up are assumed to be
missing independently of the outcome, so no imputation is attempted here.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

TRIAL_COLUMNS = ("study_id", "label", "int_events", "int_total", "ctl_events", "ctl_total", "followup_months", "tags")
CORRECTION_POLICIES = ("only0", "none")


@dataclass(frozen=True)
class ArmCount:
    events: int
    total: int

    def __post_init__(self):
        if self.total <= 0:
            raise ValueError(f"arm total must be positive, got {self.total}")
        if not 0 <= self.events <= self.total:
            raise ValueError(f"events must lie in [0, {self.total}], got {self.events}")


@dataclass(frozen=True)
class StudyArms:
    study_id: str
    label: str
    intervention: ArmCount
    control: ArmCount
    followup_months: int
    tags: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.followup_months <= 0:
            raise ValueError(f"{self.study_id}: follow-up must be positive")


@dataclass(frozen=True)
class EffectEstimate:
    study_id: str
    yi: float
    vi: float
    corrected: bool = False
    label: Optional[str] = None

    def __post_init__(self):
        if not self.vi > 0:
            raise ValueError(f"{self.study_id}: sampling variance must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EffectEstimate":
        return cls(d["study_id"], float(d["yi"]), float(d["vi"]), bool(d.get("corrected", False)), d.get("label"))


def split_control(control: ArmCount, arm_total: int, all_arms_total: int) -> ArmCount:
    """Share of a common control group for one arm of a multi-arm trial.

    Both counts are scaled by ``arm_total / all_arms_total`` and truncated.
    """
    if arm_total <= 0 or all_arms_total <= 0:
        raise ValueError("arm totals must be positive")
    if arm_total > all_arms_total:
        raise ValueError("arm_total cannot exceed all_arms_total")
    total = control.total * arm_total // all_arms_total
    events = control.events * arm_total // all_arms_total
    if total == 0:
        raise ValueError("control split leaves no patients")
    return ArmCount(events, total)


def log_risk_ratio(intervention: ArmCount, control: ArmCount, correction: str = "only0",
                   study_id: str = "", label: Optional[str] = None) -> EffectEstimate:
    """Log risk ratio and its large-sample variance.

    With ``correction="only0"`` a study with any empty cell of its 2x2 table
    gets 0.5 added to each event count and 1 to each total. ``"none"``
    refuses such studies when the ratio is undefined.
    """
    if correction not in CORRECTION_POLICIES:
        raise ValueError(f"unknown correction policy {correction!r}")
    a, n1 = intervention.events, intervention.total
    c, n2 = control.events, control.total
    zero_cell = 0 in (a, n1 - a, c, n2 - c)
    corrected = False
    if zero_cell and correction == "only0":
        a, c, n1, n2 = a + 0.5, c + 0.5, n1 + 1, n2 + 1
        corrected = True
    elif a == 0 or c == 0:
        raise ValueError(f"{study_id or 'study'}: zero events in an arm and no continuity correction allowed")
    yi = math.log((a / n1) / (c / n2))
    vi = 1 / a - 1 / n1 + 1 / c - 1 / n2
    return EffectEstimate(study_id, yi, vi, corrected, label)


def study_effect(study: StudyArms, correction: str = "only0") -> EffectEstimate:
    return log_risk_ratio(study.intervention, study.control, correction, study.study_id, study.label)


def load_trial_table(path) -> list[StudyArms]:
    """Read and validate the trial table CSV (tags are ``;``-separated)."""
    path = Path(path)
    studies: list[StudyArms] = []
    seen = set()
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return []
        missing = [c for c in TRIAL_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise ValueError(f"{path}: missing columns {missing}")
        for lineno, row in enumerate(reader, start=2):
            sid = (row["study_id"] or "").strip()
            if not sid:
                raise ValueError(f"{path}:{lineno}: empty study_id")
            if sid in seen:
                raise ValueError(f"{path}:{lineno}: duplicate study_id {sid!r}")
            seen.add(sid)
            try:
                study = StudyArms(
                    study_id=sid,
                    label=(row["label"] or sid).strip(),
                    intervention=ArmCount(int(row["int_events"]), int(row["int_total"])),
                    control=ArmCount(int(row["ctl_events"]), int(row["ctl_total"])),
                    followup_months=int(row["followup_months"]),
                    tags=frozenset(t.strip() for t in (row["tags"] or "").split(";") if t.strip()),
                )
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: study {sid!r}: {exc}") from exc
            studies.append(study)
    return studies


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_effects(estimates: Sequence[EffectEstimate], path, source=None) -> None:
    doc = {"estimates": [e.to_dict() for e in estimates]}
    if source is not None:
        doc["provenance"] = {"input": Path(source).name, "sha256": file_digest(source)}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def read_effects(path) -> list[EffectEstimate]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    items = doc["estimates"] if isinstance(doc, dict) else doc
    return [EffectEstimate.from_dict(d) for d in items]
