"""``casma`` command line: one subcommand per pipeline stage plus ``run``."""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from . import __version__
from . import agreement, bias, dedup, effects, harvest, pipeline, records, report, screen


def _dump(doc, path) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load_ledger(path):
    if path and Path(path).exists():
        return records.PrismaLedger.load(path)
    return records.PrismaLedger()


def _csv_list(value: str) -> list[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


@click.group()
@click.version_option(__version__, prog_name="casma")
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def cli(verbose):
    """Systematic-review automation and random-effects meta-analysis."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")


@cli.command()
@click.option("--in", "inputs", multiple=True, required=True, type=click.Path(exists=True, dir_okay=False),
              help="Record file (JSONL or CSV); repeatable.")
@click.option("--format", "fmt", type=click.Choice(["jsonl", "csv"]), default=None, help="Override format detection.")
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Output records JSONL.")
@click.option("--ledger", type=click.Path(dir_okay=False), help="Write an identification stage here.")
def ingest(inputs, fmt, out, ledger):
    """Import local record exports into normalized JSONL."""
    recs, rows, skipped = [], 0, 0
    for path in inputs:
        res = records.import_records(path, fmt)
        recs.extend(res.records)
        rows += res.rows_read
        skipped += len(res.skipped)
        for lineno, why in res.skipped:
            click.echo(f"{path}:{lineno}: skipped ({why})", err=True)
    records.write_jsonl(recs, out)
    if ledger:
        led = records.PrismaLedger()
        led.add_stage("identification", rows, skipped, f"unreadable rows: {skipped}" if skipped else "")
        led.save(ledger)
    grey = sum(records.classify_grey(r) for r in recs)
    click.echo(f"{len(recs)} records ({grey} grey literature), {skipped} rows skipped")


@cli.command("harvest")
@click.option("--source", type=click.Choice(["crossref", "pubmed"]), required=True)
@click.option("--query", required=True, help="Search term (Crossref: a single word, matched exactly in titles).")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--contact", default="", help="Contact e-mail sent with requests.")
@click.option("--max-pages", type=int, default=None)
@click.option("--delay", type=float, default=None, help="Minimum seconds between requests.")
def harvest_cmd(source, query, out, contact, max_pages, delay):
    """Harvest records from a remote bibliographic API."""
    make = harvest.SourceConfig.crossref if source == "crossref" else harvest.SourceConfig.pubmed
    cfg = make(contact) if delay is None else make(contact, delay=delay)
    try:
        recs = harvest.harvest_all(source, query, cfg, max_pages=max_pages)
    except (harvest.HarvestError, ValueError) as exc:
        raise click.ClickException(str(exc)) from exc
    records.write_jsonl(recs, out)
    click.echo(f"{len(recs)} records from {source}")


@cli.command("dedup")
@click.option("--in", "src", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--threshold", type=click.IntRange(min=1), default=dedup.DEFAULT_THRESHOLD, show_default=True,
              help="Titles closer than this edit distance are duplicates.")
@click.option("--doi-mode", type=click.Choice(["full", "none"]), default="full", show_default=True)
@click.option("--prefix-count", is_flag=True,
              help="Also report how many records remain after DOI-prefix collapsing (trend statistic only).")
@click.option("--pairs-out", type=click.Path(dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--ledger", type=click.Path(dir_okay=False), help="Ledger to extend in place.")
def dedup_cmd(src, threshold, doi_mode, prefix_count, pairs_out, out, ledger):
    """Remove DOI and near-identical-title duplicates."""
    recs = records.read_jsonl(src)
    if prefix_count:
        # counted on a side copy; prefix collapsing never shapes the corpus written to --out
        click.echo(f"{len(records.dedup_by_doi(recs, 'prefix')[0])} records after DOI-prefix collapsing")
    led = _load_ledger(ledger)
    n0 = len(recs)
    if not led.stages:
        led.add_stage("identification", n0, 0)
    if doi_mode != "none":
        recs, removed = records.dedup_by_doi(recs, doi_mode)
        led.add_stage(f"duplicates removed (DOI, {doi_mode})", n0, len(removed))
    pairs = dedup.find_duplicate_pairs([r.title for r in recs], threshold)
    kept, removed = dedup.merge_duplicates(recs, pairs)
    led.add_stage(f"duplicates removed (title distance < {threshold})", len(recs), len(removed))
    records.write_jsonl(kept, out)
    if pairs_out:
        pipeline.write_pairs([(recs[i].id, recs[j].id, d) for i, j, d in pairs], Path(pairs_out))
    if ledger:
        led.save(ledger)
    click.echo(f"{n0} -> {len(kept)} records ({len(pairs)} title pairs)")


@cli.command("screen")
@click.option("--rules", required=True, type=click.Path(dir_okay=False))
@click.option("--in", "src", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--decisions", required=True, type=click.Path(dir_okay=False))
@click.option("--ledger", type=click.Path(dir_okay=False), help="Ledger to extend in place.")
def screen_cmd(rules, src, decisions, ledger):
    """Apply regular-expression screening rules."""
    try:
        ruleset = screen.compile_ruleset(rules)
    except (OSError, screen.RuleError) as exc:
        raise click.ClickException(str(exc)) from exc
    recs = records.read_jsonl(src)
    led = _load_ledger(ledger)
    if not led.stages:
        led.add_stage("identification", len(recs), 0)
    try:
        decs, led = screen.screen_corpus(recs, ruleset, led)
    except ValueError as exc:
        raise click.ClickException(f"ledger does not match the input records: {exc}") from exc
    screen.write_decisions(decs, decisions)
    if ledger:
        led.save(ledger)
    click.echo(led.stages[-1].reason)


@cli.command()
@click.option("--grades", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--reps", type=int, default=2000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--n-jobs", type=int, default=1, show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def irr(grades, reps, seed, n_jobs, out):
    """Weighted kappa with a bootstrap BCa interval."""
    try:
        sheet = agreement.GradeSheet.from_long_csv(grades)
        boot = agreement.bootstrap_kappa(sheet, reps, seed, n_jobs=n_jobs)
    except ValueError as exc:
        raise click.ClickException(str(exc)) from exc
    doc = {"seed": seed, **agreement.kappa_summary(sheet, boot)}
    _dump(doc, out)
    click.echo(f"kappa {doc['kappa']:.3f} ({boot.ci_low:.3f}, {boot.ci_high:.3f}); "
               f"concordance {doc['concordance']}/{doc['n_items']}")


@cli.command()
@click.option("--trials", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--exclude-tag", multiple=True, help="Drop trials carrying this tag; repeatable.")
@click.option("--correction", type=click.Choice(effects.CORRECTION_POLICIES), default="only0", show_default=True)
@click.option("--seed", type=int, default=None, help="Seed to record in the artifact.")
def extract(trials, out, exclude_tag, correction, seed):
    """Log risk ratios from the trial table."""
    try:
        doc = pipeline.effects_document(effects.load_trial_table(trials), Path(trials), correction, exclude_tag, seed)
    except ValueError as exc:
        raise click.ClickException(str(exc)) from exc
    _dump(doc, out)
    click.echo(f"{len(doc['estimates'])} studies")


@cli.command()
@click.option("--effects", "src", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--estimator", type=click.Choice(["reml", "dl"]), default="reml", show_default=True)
@click.option("--boot", type=int, default=0, show_default=True, help="Bootstrap replicates (0 = off).")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--loo", is_flag=True, help="Add leave-one-out fits.")
@click.option("--tau2-ci", default="qprofile,profile", show_default=True, help="Comma list of qprofile, profile.")
@click.option("--omit", multiple=True, help="Study id to leave out; repeatable.")
@click.option("--n-jobs", type=int, default=1, show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def pool(src, estimator, boot, seed, loo, tau2_ci, omit, n_jobs, out):
    """Random-effects pooling with tau2 intervals, leave-one-out and bootstrap."""
    methods = _csv_list(tau2_ci)
    bad = set(methods) - {"qprofile", "profile"}
    if bad:
        raise click.BadParameter(f"unknown methods {sorted(bad)}", param_hint="--tau2-ci")
    doc_in = json.loads(Path(src).read_text(encoding="utf-8"))
    est = [e for e in effects.read_effects(src) if e.study_id not in set(omit)]
    unknown = set(omit) - {e.study_id for e in effects.read_effects(src)}
    if unknown:
        raise click.BadParameter(f"no such studies {sorted(unknown)}", param_hint="--omit")
    try:
        doc = pipeline.pool_document(est, estimator, methods, loo, boot, seed, n_jobs)
    except ValueError as exc:
        raise click.ClickException(str(exc)) from exc
    if isinstance(doc_in, dict) and not omit:
        doc["control"] = doc_in.get("control")
    _dump(doc, out)
    p = doc["pooled"]
    click.echo(f"RR {p['rr']:.2f} ({p['rr_low']:.2f}, {p['rr_high']:.2f}), k = {p['k']}, tau2 = {p['tau2']:.4f}")


@cli.command("bias")
@click.option("--effects", "src", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--svg", type=click.Path(dir_okay=False), help="Also draw the Doi plot.")
def bias_cmd(src, out, svg):
    """Doi plot and LFK index."""
    try:
        doc = pipeline.bias_document(effects.read_effects(src))
    except ValueError as exc:
        raise click.ClickException(str(exc)) from exc
    _dump(doc, out)
    if svg:
        from . import plotting

        plotting.save_svg(plotting.doi_figure(doc["doi_plot"]["points"], doc["lfk"]["index"]), svg)
    click.echo(f"LFK {doc['lfk']['index']:.3f} ({doc['lfk']['classification']})")


@cli.command("report")
@click.option("--pooled", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--ledger", type=click.Path(exists=True, dir_okay=False))
@click.option("--bias", "bias_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--control", nargs=2, type=int, default=None, metavar="EVENTS TOTAL",
              help="Control-arm counts for absolute effects (default: from pooled.json).")
@click.option("--format", "formats", default="json,csv,svg,markdown", show_default=True)
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
def report_cmd(pooled, ledger, bias_path, control, formats, out_dir):
    """Render forest, Doi, profile and PRISMA outputs."""
    load = lambda p: json.loads(Path(p).read_text(encoding="utf-8")) if p else None
    try:
        doc = pipeline.build_report(load(pooled), load(ledger), load(bias_path), tuple(control) if control else None)
        written = report.render_reports(doc, out_dir, _csv_list(formats))
    except (ValueError, report.ReportError) as exc:
        raise click.ClickException(str(exc)) from exc
    for p in written:
        click.echo(str(p))


@cli.command()
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False))
@click.option("--out-dir", type=click.Path(file_okay=False), help="Override the configured output directory.")
@click.option("--stage", "stages", multiple=True, type=click.Choice(pipeline.STAGES),
              help="Run only these stages (from existing upstream artifacts); repeatable.")
@click.option("--n-jobs", type=int, default=None)
def run(config_path, out_dir, stages, n_jobs):
    """Run the whole pipeline from a JSON config."""
    try:
        cfg = pipeline.PipelineConfig.load(config_path)
        if out_dir:
            cfg.out_dir = Path(out_dir).resolve()
        if n_jobs:
            cfg.n_jobs = n_jobs
        manifest = pipeline.run_pipeline(cfg, stages or None)
    except (pipeline.ConfigError, pipeline.PipelineError) as exc:
        raise click.ClickException(str(exc)) from exc
    for s in manifest["stages"]:
        click.echo(f"{s['stage']:8s} {s['seconds']:8.2f}s  {json.dumps(s['summary'])}")
    click.echo(f"manifest: {cfg.artifact('manifest')}")


def main(argv=None):
    return cli.main(args=argv, prog_name="casma")


if __name__ == "__main__":
    sys.exit(main())
