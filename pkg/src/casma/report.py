"""Forest data, Summary-of-Findings arithmetic and report rendering."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Iterable, Optional, Sequence

from scipy import stats

from .bias import DoiPlot, LfkResult
from .effects import EffectEstimate
from .meta import LooEntry, PooledResult, Tau2Interval, study_weights
from .records import PrismaLedger

FORMATS = ("json", "csv", "svg", "markdown")


class ReportError(OSError):
    pass


def round_half_away(x: float) -> int:
    """Nearest integer, halves rounded away from zero (2.5 -> 3, -2.5 -> -3)."""
    # Decimal's ROUND_HALF_UP is symmetric about zero
    return int(Decimal(repr(x)).quantize(Decimal(1), rounding=ROUND_HALF_UP))


# --------------------------------------------------------------------------
# Summary of findings
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SofRow:
    control_risk_per_1000: int
    intervention_risk_per_1000: int
    difference_per_1000: int
    difference_ci_per_1000: tuple[int, int]

    def describe(self) -> str:
        def words(d):
            return f"{abs(d)} {'fewer' if d < 0 else 'more'}"
        lo, hi = self.difference_ci_per_1000
        return f"{words(self.difference_per_1000)} per 1,000 (from {words(lo)} to {words(hi)})"

    def to_dict(self) -> dict:
        return {
            "control_risk_per_1000": self.control_risk_per_1000,
            "intervention_risk_per_1000": self.intervention_risk_per_1000,
            "difference_per_1000": self.difference_per_1000,
            "difference_ci_per_1000": list(self.difference_ci_per_1000),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SofRow":
        return cls(d["control_risk_per_1000"], d["intervention_risk_per_1000"], d["difference_per_1000"],
                   tuple(d["difference_ci_per_1000"]))


def sof_from_ratio(rr: float, rr_low: float, rr_high: float, control_events: int, control_total: int) -> SofRow:
    """Absolute effects per 1,000 from a risk ratio and its interval.

    All arithmetic stays unrounded until the per-1,000 values are formed.
    """
    if control_total <= 0:
        raise ValueError("control_total must be positive")
    if not 0 <= control_events <= control_total:
        raise ValueError("control_events must lie in [0, control_total]")
    if not 0 < rr_low <= rr <= rr_high:
        raise ValueError("expected 0 < rr_low <= rr <= rr_high")
    cr = control_events / control_total
    per = lambda x: round_half_away(1000.0 * x)
    return SofRow(
        per(cr),
        per(cr * rr),
        per(cr * (rr - 1.0)),
        (per(cr * (rr_low - 1.0)), per(cr * (rr_high - 1.0))),
    )


def sof_absolute_effects(pooled: PooledResult, control_events: int, control_total: int) -> SofRow:
    return sof_from_ratio(pooled.rr, pooled.rr_low, pooled.rr_high, control_events, control_total)


# --------------------------------------------------------------------------
# Forest data
# --------------------------------------------------------------------------


def forest_rows(estimates: Sequence[EffectEstimate], pooled: PooledResult) -> list[dict]:
    """Per-study RR with Wald interval and random-effects weight in percent."""
    z = stats.norm.ppf(0.5 + pooled.level / 2.0)
    weights = study_weights(estimates, pooled.tau2)
    rows = []
    for e, w in zip(estimates, weights):
        se = math.sqrt(e.vi)
        rows.append({
            "study_id": e.study_id,
            "label": e.label or e.study_id,
            "rr": math.exp(e.yi),
            "rr_low": math.exp(e.yi - z * se),
            "rr_high": math.exp(e.yi + z * se),
            "weight": float(w),
        })
    return rows


def prisma_rows(ledger: PrismaLedger) -> list[dict]:
    return [{"name": s.stage_name, "count_in": s.records_in, "excluded": s.records_excluded,
             "count_out": s.records_out, "reason": s.reason} for s in ledger.stages]


# --------------------------------------------------------------------------
# Rendering
# --------------------------------------------------------------------------


def report_document(pooled: PooledResult, estimates: Sequence[EffectEstimate], ledger: Optional[PrismaLedger] = None,
                    doi: Optional[DoiPlot] = None, lfk: Optional[LfkResult] = None,
                    intervals: Sequence[Tau2Interval] = (), loo: Sequence[LooEntry] = (),
                    sof: Optional[SofRow] = None, bootstrap: Optional[dict] = None,
                    seed: Optional[int] = None) -> dict:
    """Everything the report shows, as plain JSON-compatible data."""
    doc = {
        "seed": seed,
        "pooled": pooled.to_dict(),
        "estimates": [e.to_dict() for e in estimates],
        "forest": forest_rows(estimates, pooled),
        "tau2_intervals": [t.to_dict() for t in intervals],
        "leave_one_out": [entry.to_dict() for entry in loo],
        "bootstrap": bootstrap,
        "doi_plot": doi.to_dict() if doi is not None else None,
        "lfk": None if lfk is None else {"index": lfk.index, "classification": lfk.classification,
                                          "empty_limb": lfk.empty_limb},
        "prisma": ledger.to_dict() if ledger is not None else None,
        "sof": sof.to_dict() if sof is not None else None,
    }
    return doc


def read_report(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _write_csv(path: Path, rows: Iterable[dict], columns: Sequence[str]) -> None:
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow(r)


def _fmt_rr(d: dict) -> str:
    return f"{d['rr']:.2f} ({d['rr_low']:.2f}, {d['rr_high']:.2f})"


def _markdown(doc: dict) -> str:
    p = doc["pooled"]
    lines = ["# Meta-analysis report", ""]
    if doc.get("seed") is not None:
        lines += [f"Seed: {doc['seed']}", ""]
    lines += [
        "## Pooled estimate", "",
        f"Random effects ({p['estimator'].upper()}), k = {p['k']}: RR {_fmt_rr(p)}, p = {p['p']:.4f}.",
        "",
        f"Q = {p['Q']:.2f} (df = {p['df']}), tau2 = {p['tau2']:.4f}, I2 = {p['i_squared']:.2f}%, "
        f"H2 = {p['h_squared']:.2f}.",
        "",
        "| Study | RR (95% CI) | Weight % |",
        "|---|---|---|",
    ]
    lines += [f"| {r['label']} | {_fmt_rr(r)} | {r['weight']:.1f} |" for r in doc["forest"]]
    lines.append("")
    for t in doc["tau2_intervals"]:
        lines.append(f"tau2 interval ({t['method']}): [{t['low']:.4f}, {t['high']:.4f}]")
    if doc["tau2_intervals"]:
        lines.append("")
    if doc["leave_one_out"]:
        lines += ["## Leave-one-out", "", "| Omitted | RR (95% CI) | p |", "|---|---|---|"]
        for entry in doc["leave_one_out"]:
            r = entry["result"]
            lines.append(f"| {entry['omitted_study_id']} | {_fmt_rr(r)} | {r['p']:.4f} |")
        lines.append("")
    b = doc.get("bootstrap")
    if b:
        lines += ["## Bootstrap", "",
                  f"R = {b['R']}, seed {b['seed']}: BCa RR ({b['rr_low']:.3f}, {b['rr_high']:.3f}), "
                  f"{b['n_failures']} non-converged replicates dropped.", ""]
    if doc.get("lfk"):
        lk = doc["lfk"]
        lines += ["## Small-study asymmetry", "",
                  f"LFK index {lk['index']:.3f} ({lk['classification'].replace('_', ' ')}).", ""]
    if doc.get("sof"):
        s = SofRow.from_dict(doc["sof"])
        lines += ["## Absolute effect", "",
                  f"Control risk {s.control_risk_per_1000} per 1,000; with intervention "
                  f"{s.intervention_risk_per_1000} per 1,000: {s.describe()}.", ""]
    if doc.get("prisma"):
        lines += ["## Record flow", "", "| Stage | In | Excluded | Out |", "|---|---|---|---|"]
        for s in doc["prisma"]["stages"]:
            lines.append(f"| {s['stage_name']} | {s['records_in']} | {s['records_excluded']} | "
                         f"{s['records_in'] - s['records_excluded']} |")
        lines.append("")
    return "\n".join(lines)


def render_reports(doc: dict, out_dir, formats: Iterable[str] = ("json", "svg", "markdown")) -> list[Path]:
    """Write the report document in the requested formats; returns the files written."""
    formats = set(formats)
    unknown = formats - set(FORMATS)
    if unknown:
        raise ValueError(f"unknown report formats {sorted(unknown)}; choose from {FORMATS}")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ReportError(f"cannot create report directory {out}: {exc}") from exc
    written: list[Path] = []
    try:
        if "json" in formats:
            path = out / "report.json"
            path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
            written.append(path)
        if "csv" in formats:
            path = out / "forest.csv"
            _write_csv(path, doc["forest"], ("study_id", "label", "rr", "rr_low", "rr_high", "weight"))
            written.append(path)
            if doc.get("leave_one_out"):
                path = out / "leave_one_out.csv"
                rows = [{"omitted_study_id": e["omitted_study_id"], **e["result"]} for e in doc["leave_one_out"]]
                _write_csv(path, rows, ("omitted_study_id", "rr", "rr_low", "rr_high", "p", "tau2", "i_squared"))
                written.append(path)
            if doc.get("prisma"):
                path = out / "prisma.csv"
                _write_csv(path, prisma_rows(PrismaLedger.from_dict(doc["prisma"])),
                           ("name", "count_in", "excluded", "count_out", "reason"))
                written.append(path)
        if "markdown" in formats:
            path = out / "report.md"
            path.write_text(_markdown(doc), encoding="utf-8")
            written.append(path)
        if "svg" in formats:
            written += _render_figures(doc, out)
    except OSError as exc:
        raise ReportError(f"cannot write reports to {out}: {exc}") from exc
    return written


def _render_figures(doc: dict, out: Path) -> list[Path]:
    from . import plotting

    written = [plotting.save_svg(plotting.forest_figure(doc["forest"], doc["pooled"]), out / "forest.svg")]
    if doc.get("doi_plot"):
        lfk = doc["lfk"]["index"] if doc.get("lfk") else None
        written.append(plotting.save_svg(plotting.doi_figure(doc["doi_plot"]["points"], lfk), out / "doi.svg"))
    for t in doc["tau2_intervals"]:
        if t["method"] == "profile_likelihood" and t["curve"]:
            peak = t.get("peak_loglik")
            if peak is None:
                peak = max(c[1] for c in t["curve"])
            cutoff = peak - stats.chi2.ppf(t["level"], 1) / 2.0
            fig = plotting.profile_figure(t["curve"], t["low"], t["high"], cutoff)
            written.append(plotting.save_svg(fig, out / "tau2_profile.svg"))
    if doc.get("prisma") and doc["prisma"]["stages"]:
        stages = prisma_rows(PrismaLedger.from_dict(doc["prisma"]))
        written.append(plotting.save_svg(plotting.prisma_figure(stages), out / "prisma.svg"))
    return written
