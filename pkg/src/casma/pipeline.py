"""End-to-end pipeline driven by a single JSON config.

Each stage reads its inputs from the config or from artifacts written by an
earlier stage in ``out_dir``, so a stage can be rerun on its own as long as
its upstream artifacts exist.
"""

from __future__ import annotations

import hashlib
import json
import logging
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

from . import __version__
from . import agreement, bias, dedup, effects, meta, records, report, screen

logger = logging.getLogger(__name__)

STAGES = ("harvest", "dedup", "screen", "irr", "extract", "pool", "bias", "report")

# artifact names inside out_dir
ARTIFACTS = {
    "records": "records.jsonl",
    "deduped": "deduped.jsonl",
    "pairs": "pairs.csv",
    "decisions": "decisions.jsonl",
    "ledger": "prisma.json",
    "irr": "irr.json",
    "effects": "effects.json",
    "pooled": "pooled.json",
    "bias": "bias.json",
    "reports": "reports",
    "manifest": "manifest.json",
}


class ConfigError(ValueError):
    pass


class PipelineError(RuntimeError):
    pass


@dataclass
class PipelineConfig:
    seed: int
    out_dir: Path
    inputs: list[dict]
    rules: Path
    grades: Path
    trials: Path
    doi_mode: str = "full"
    threshold: int = dedup.DEFAULT_THRESHOLD
    irr_reps: int = 2000
    estimator: str = "reml"
    boot: int = 10000
    loo: bool = True
    tau2_ci: tuple = ("qprofile", "profile")
    omit: list[str] = field(default_factory=list)
    exclude_tags: list[str] = field(default_factory=list)
    correction: str = "only0"
    n_jobs: int = 1
    formats: tuple = ("json", "csv", "svg", "markdown")
    source: Optional[Path] = None

    @classmethod
    def from_dict(cls, doc: dict, base_dir=".") -> "PipelineConfig":
        """Build and validate a config; relative paths resolve against ``base_dir``."""
        base = Path(base_dir)

        def section(name):
            value = doc.get(name, {})
            if not isinstance(value, dict):
                raise ConfigError(f"config section {name!r} must be an object")
            return value

        def path(value, what):
            if not isinstance(value, str) or not value:
                raise ConfigError(f"{what} must be a non-empty path string")
            return (base / value).resolve()

        if "seed" not in doc or not isinstance(doc["seed"], int) or isinstance(doc["seed"], bool):
            raise ConfigError("config needs an integer 'seed'")
        harvest, dd, sc, gr = section("harvest"), section("dedup"), section("screen"), section("grading")
        ex, pool, rep = section("extract"), section("pool"), section("report")
        inputs = harvest.get("inputs", [])
        if not isinstance(inputs, list) or not inputs:
            raise ConfigError("harvest.inputs must list at least one record file")
        resolved = []
        for i, item in enumerate(inputs):
            if not isinstance(item, dict) or "path" not in item:
                raise ConfigError(f"harvest.inputs[{i}] needs a 'path'")
            resolved.append({"path": path(item["path"], f"harvest.inputs[{i}].path"), "format": item.get("format")})
        if "rules" not in sc:
            raise ConfigError("screen.rules is required")
        if "grades" not in gr:
            raise ConfigError("grading.grades is required")
        if "trials" not in ex:
            raise ConfigError("extract.trials is required")
        cfg = cls(
            seed=doc["seed"],
            out_dir=path(doc.get("out_dir", "casma-run"), "out_dir"),
            inputs=resolved,
            rules=path(sc["rules"], "screen.rules"),
            grades=path(gr["grades"], "grading.grades"),
            trials=path(ex["trials"], "extract.trials"),
            doi_mode=harvest.get("doi_mode", "full"),
            threshold=dd.get("threshold", dedup.DEFAULT_THRESHOLD),
            irr_reps=gr.get("reps", 2000),
            estimator=pool.get("estimator", "reml"),
            boot=pool.get("boot", 10000),
            loo=bool(pool.get("loo", True)),
            tau2_ci=tuple(pool.get("tau2_ci", ("qprofile", "profile"))),
            omit=list(pool.get("omit", [])),
            exclude_tags=list(ex.get("exclude_tags", [])),
            correction=ex.get("correction", "only0"),
            n_jobs=int(doc.get("n_jobs", 1)),
            formats=tuple(rep.get("formats", ("json", "csv", "svg", "markdown"))),
        )
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be an object")
        cfg = cls.from_dict(doc, path.parent)
        cfg.source = path.resolve()
        return cfg

    def validate(self) -> None:
        """Check values and that every referenced input file exists."""
        for item in self.inputs:
            if not item["path"].is_file():
                raise ConfigError(f"record input not found: {item['path']}")
            if item["format"] not in (None, "jsonl", "csv"):
                raise ConfigError(f"unsupported record format {item['format']!r}")
        for name in ("rules", "grades", "trials"):
            p = getattr(self, name)
            if not p.is_file():
                raise ConfigError(f"{name} file not found: {p}")
        if self.doi_mode == "prefix":
            raise ConfigError("harvest.doi_mode 'prefix' merges distinct papers and cannot build the screening "
                              "corpus; it is reported as a trend count instead")
        if self.doi_mode not in ("full", "none"):
            raise ConfigError("harvest.doi_mode must be 'full' or 'none'")
        if not isinstance(self.threshold, int) or self.threshold < 1:
            raise ConfigError("dedup.threshold must be a positive integer")
        if self.estimator not in meta.ESTIMATORS:
            raise ConfigError(f"pool.estimator must be one of {meta.ESTIMATORS}")
        if self.boot and self.boot < 100:
            raise ConfigError("pool.boot must be 0 (off) or at least 100")
        if self.irr_reps < 100:
            raise ConfigError("grading.reps must be at least 100")
        bad = set(self.tau2_ci) - {"qprofile", "profile"}
        if bad:
            raise ConfigError(f"unknown tau2 interval methods {sorted(bad)}")
        bad = set(self.formats) - set(report.FORMATS)
        if bad:
            raise ConfigError(f"unknown report formats {sorted(bad)}")
        if self.correction not in effects.CORRECTION_POLICIES:
            raise ConfigError(f"extract.correction must be one of {effects.CORRECTION_POLICIES}")

    def artifact(self, key: str) -> Path:
        return self.out_dir / ARTIFACTS[key]


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------


def sha256(path: Path) -> str:
    path = Path(path)
    if path.is_dir():
        h = hashlib.sha256()
        for p in sorted(path.rglob("*")):
            if p.is_file():
                h.update(p.relative_to(path).as_posix().encode())
                h.update(p.read_bytes())
        return h.hexdigest()
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _dump(doc, path: Path) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load(path: Path) -> dict:
    return json.loads(path.read_text(encoding="utf-8"))


def _need(cfg: PipelineConfig, *keys: str) -> list[Path]:
    paths = [cfg.artifact(k) for k in keys]
    missing = [str(p) for p in paths if not p.exists()]
    if missing:
        raise PipelineError(f"missing upstream artifact(s): {', '.join(missing)}")
    return paths


def select_effects(studies: Sequence[effects.StudyArms], exclude_tags=(), omit=()) -> list[effects.StudyArms]:
    tags, omit = set(exclude_tags), set(omit)
    return [s for s in studies if not (s.tags & tags) and s.study_id not in omit]


# --------------------------------------------------------------------------
# stages; each returns (inputs, outputs, summary)
# --------------------------------------------------------------------------


def stage_harvest(cfg: PipelineConfig):
    all_recs, rows, skipped = [], 0, 0
    for item in cfg.inputs:
        res = records.import_records(item["path"], item["format"])
        all_recs.extend(res.records)
        rows += res.rows_read
        skipped += len(res.skipped)
    ledger = records.PrismaLedger()
    ledger.add_stage("identification", rows, skipped, f"unreadable rows: {skipped}" if skipped else "")
    records.write_jsonl(all_recs, cfg.artifact("records"))
    _dump({"seed": cfg.seed, **ledger.to_dict()}, cfg.artifact("ledger"))
    grey = sum(records.classify_grey(r) for r in all_recs)
    return [i["path"] for i in cfg.inputs], [cfg.artifact("records"), cfg.artifact("ledger")], \
        {"records": len(all_recs), "skipped": skipped, "grey": grey}


def stage_dedup(cfg: PipelineConfig):
    src, led = _need(cfg, "records", "ledger")
    recs = records.read_jsonl(src)
    ledger = records.PrismaLedger.from_dict(_load(led))
    # rerunning from a later stage starts the ledger again after identification
    ledger.stages = ledger.stages[:1]
    n0 = len(recs)
    if cfg.doi_mode != "none":
        recs, removed = records.dedup_by_doi(recs, cfg.doi_mode)
        ledger.add_stage(f"duplicates removed (DOI, {cfg.doi_mode})", n0, len(removed))
    pairs = dedup.find_duplicate_pairs([r.title for r in recs], cfg.threshold)
    kept, removed = dedup.merge_duplicates(recs, pairs)
    ledger.add_stage(f"duplicates removed (title distance < {cfg.threshold})", len(recs), len(removed))
    records.write_jsonl(kept, cfg.artifact("deduped"))
    write_pairs([(recs[i].id, recs[j].id, d) for i, j, d in pairs], cfg.artifact("pairs"))
    _dump({"seed": cfg.seed, **ledger.to_dict()}, led)
    # trend statistic only; computed from the raw records and never fed forward
    trend = len(records.dedup_by_doi(records.read_jsonl(src), "prefix")[0])
    return [src], [cfg.artifact("deduped"), cfg.artifact("pairs"), led], \
        {"records_in": n0, "records_out": len(kept), "title_pairs": len(pairs), "doi_prefix_unique": trend}


def write_pairs(rows, path: Path) -> None:
    import csv

    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id_a", "id_b", "distance"])
        w.writerows(rows)


def stage_screen(cfg: PipelineConfig):
    src, led = _need(cfg, "deduped", "ledger")
    rules = screen.compile_ruleset(cfg.rules)
    ledger = records.PrismaLedger.from_dict(_load(led))
    ledger.stages = [s for s in ledger.stages if not s.stage_name.startswith("regex")]
    decisions, ledger = screen.screen_corpus(records.read_jsonl(src), rules, ledger)
    screen.write_decisions(decisions, cfg.artifact("decisions"))
    _dump({"seed": cfg.seed, **ledger.to_dict()}, led)
    counts = {}
    for d in decisions:
        counts[d.status] = counts.get(d.status, 0) + 1
    return [src, cfg.rules], [cfg.artifact("decisions"), led], counts


def stage_irr(cfg: PipelineConfig):
    sheet = agreement.GradeSheet.from_long_csv(cfg.grades)
    boot = agreement.bootstrap_kappa(sheet, cfg.irr_reps, cfg.seed, n_jobs=cfg.n_jobs)
    doc = {"seed": cfg.seed, **agreement.kappa_summary(sheet, boot)}
    _dump(doc, cfg.artifact("irr"))
    return [cfg.grades], [cfg.artifact("irr")], {"kappa": round(doc["kappa"], 4)}


def effects_document(studies: Sequence[effects.StudyArms], source: Path, correction="only0", exclude_tags=(),
                     seed=None) -> dict:
    """Estimates plus pooled control-arm counts and the digest of the trial table."""
    studies = select_effects(studies, exclude_tags)
    est = [effects.study_effect(s, correction) for s in studies]
    return {
        "seed": seed,
        "estimates": [e.to_dict() for e in est],
        "control": {"events": sum(s.control.events for s in studies), "total": sum(s.control.total for s in studies)},
        "provenance": {"input": Path(source).name, "sha256": effects.file_digest(source),
                       "excluded_tags": list(exclude_tags), "correction": correction},
    }


def stage_extract(cfg: PipelineConfig):
    doc = effects_document(effects.load_trial_table(cfg.trials), cfg.trials, cfg.correction, cfg.exclude_tags,
                           cfg.seed)
    _dump(doc, cfg.artifact("effects"))
    return [cfg.trials], [cfg.artifact("effects")], {"studies": len(doc["estimates"])}


def pool_document(est: Sequence[effects.EffectEstimate], estimator="reml", tau2_ci=("qprofile", "profile"),
                  loo=True, boot=0, seed=0, n_jobs=1) -> dict:
    """Everything the pooling stage reports, as JSON-compatible data."""
    pooled = meta.pool_random_effects(est, estimator)
    doc = {"seed": seed, "pooled": pooled.to_dict(), "estimates": [e.to_dict() for e in est],
           "tau2_intervals": [], "leave_one_out": [], "bootstrap": None}
    if len(est) >= 2:
        if "qprofile" in tau2_ci:
            doc["tau2_intervals"].append(meta.tau2_ci_qprofile(est, estimator=estimator).to_dict())
        if "profile" in tau2_ci:
            doc["tau2_intervals"].append(meta.tau2_ci_profile_likelihood(est).to_dict())
        if boot:
            doc["bootstrap"] = meta.bootstrap_pool(est, boot, seed, estimator, n_jobs=n_jobs).to_dict()
    if loo and len(est) >= 3:
        doc["leave_one_out"] = [e.to_dict() for e in meta.leave_one_out(est, estimator)]
    return doc


def stage_pool(cfg: PipelineConfig):
    (src,) = _need(cfg, "effects")
    est = [e for e in effects.read_effects(src) if e.study_id not in set(cfg.omit)]
    doc = pool_document(est, cfg.estimator, cfg.tau2_ci, cfg.loo, cfg.boot, cfg.seed, cfg.n_jobs)
    doc["control"] = _load(src).get("control")
    _dump(doc, cfg.artifact("pooled"))
    p = doc["pooled"]
    return [src], [cfg.artifact("pooled")], {"rr": round(p["rr"], 4), "k": p["k"]}


def bias_document(est: Sequence[effects.EffectEstimate], seed=None) -> dict:
    plot = bias.doi_plot(est)
    lfk = bias.lfk_index(plot)
    return {"seed": seed, "doi_plot": plot.to_dict(),
            "lfk": {"index": lfk.index, "classification": lfk.classification, "empty_limb": lfk.empty_limb}}


def stage_bias(cfg: PipelineConfig):
    (src,) = _need(cfg, "effects")
    est = [e for e in effects.read_effects(src) if e.study_id not in set(cfg.omit)]
    doc = bias_document(est, cfg.seed)
    _dump(doc, cfg.artifact("bias"))
    return [src], [cfg.artifact("bias")], {"lfk": round(doc["lfk"]["index"], 4)}


def build_report(pooled_doc: dict, ledger_doc: Optional[dict] = None, bias_doc: Optional[dict] = None,
                 control: Optional[tuple[int, int]] = None) -> dict:
    pooled = meta.PooledResult.from_dict(pooled_doc["pooled"])
    est = [effects.EffectEstimate.from_dict(d) for d in pooled_doc["estimates"]]
    intervals = [meta.Tau2Interval.from_dict(t) for t in pooled_doc.get("tau2_intervals", [])]
    loo = [meta.LooEntry.from_dict(d) for d in pooled_doc.get("leave_one_out", [])]
    ledger = records.PrismaLedger.from_dict(ledger_doc) if ledger_doc else None
    doi = lfk = None
    if bias_doc:
        doi = bias.DoiPlot.from_dict(bias_doc["doi_plot"])
        lfk = bias.LfkResult(**bias_doc["lfk"])
    if control is None and pooled_doc.get("control"):
        control = (pooled_doc["control"]["events"], pooled_doc["control"]["total"])
    sof = report.sof_absolute_effects(pooled, *control) if control else None
    return report.report_document(pooled, est, ledger, doi, lfk, intervals, loo, sof,
                                  pooled_doc.get("bootstrap"), pooled_doc.get("seed"))


def stage_report(cfg: PipelineConfig):
    pooled_p, led_p, bias_p = _need(cfg, "pooled", "ledger", "bias")
    doc = build_report(_load(pooled_p), _load(led_p), _load(bias_p))
    out = cfg.artifact("reports")
    written = report.render_reports(doc, out, cfg.formats)
    return [pooled_p, led_p, bias_p], written, {"files": len(written)}


STAGE_FUNCS: dict[str, Callable] = {
    "harvest": stage_harvest,
    "dedup": stage_dedup,
    "screen": stage_screen,
    "irr": stage_irr,
    "extract": stage_extract,
    "pool": stage_pool,
    "bias": stage_bias,
    "report": stage_report,
}


def _versions() -> dict:
    import matplotlib
    import numpy
    import scipy

    return {"casma": __version__, "python": platform.python_version(), "numpy": numpy.__version__,
            "scipy": scipy.__version__, "matplotlib": matplotlib.__version__}


def run_pipeline(cfg: PipelineConfig, stages: Optional[Sequence[str]] = None) -> dict:
    """Run ``stages`` (default: all, in dependency order) and write the manifest.

    The manifest records input and output digests, the seed, library versions
    and wall-clock timings for each stage.
    """
    cfg.validate()
    wanted = list(STAGES) if stages is None else list(stages)
    unknown = [s for s in wanted if s not in STAGES]
    if unknown:
        raise ConfigError(f"unknown stages {unknown}; choose from {STAGES}")
    wanted = [s for s in STAGES if s in wanted]
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for name in wanted:
        t0 = time.perf_counter()
        logger.info("stage %s", name)
        inputs, outputs, summary = STAGE_FUNCS[name](cfg)
        entries.append({
            "stage": name,
            "seconds": round(time.perf_counter() - t0, 4),
            "inputs": {str(p): sha256(p) for p in inputs},
            "outputs": {str(p): sha256(p) for p in outputs},
            "summary": summary,
        })
    manifest = {
        "seed": cfg.seed,
        "config": str(cfg.source) if cfg.source else None,
        "versions": _versions(),
        "created": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "stages": entries,
    }
    _dump(manifest, cfg.artifact("manifest"))
    return manifest
