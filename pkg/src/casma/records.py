"""Bibliographic records, the PRISMA ledger, local import and DOI deduplication."""

from __future__ import annotations

import csv
import datetime as dt
import hashlib
import json
import logging
import re
import unicodedata
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional

logger = logging.getLogger(__name__)

SOURCES = ("pubmed", "scopus", "crossref", "google_scholar", "manual")
RECORD_TYPES = ("journal_article", "posted_content", "proceedings", "report", "other")
GREY_TYPES = frozenset({"posted_content", "proceedings", "report"})

# lower value wins when two duplicates share a creation date
SOURCE_PRIORITY = {name: rank for rank, name in enumerate(SOURCES)}

_TYPE_ALIASES = {
    "journal-article": "journal_article",
    "journal article": "journal_article",
    "article": "journal_article",
    "posted-content": "posted_content",
    "preprint": "posted_content",
    "proceedings-article": "proceedings",
    "proceedings": "proceedings",
    "report": "report",
    "report-series": "report",
}

_WS = re.compile(r"\s+")


def normalize_text(text: str) -> str:
    """NFC-normalize, collapse whitespace runs and strip. Case is kept."""
    return _WS.sub(" ", unicodedata.normalize("NFC", text)).strip()


def normalize_doi(doi: Optional[str]) -> Optional[str]:
    if doi is None:
        return None
    doi = doi.strip().lower()
    for prefix in ("https://doi.org/", "http://doi.org/", "https://dx.doi.org/", "http://dx.doi.org/", "doi:"):
        if doi.startswith(prefix):
            doi = doi[len(prefix):]
    return doi or None


def doi_prefix(doi: Optional[str]) -> Optional[str]:
    if not doi:
        return None
    return doi.split("/", 1)[0]


def normalize_record_type(value: Optional[str]) -> str:
    if not value:
        return "other"
    value = value.strip().lower()
    if value in RECORD_TYPES:
        return value
    return _TYPE_ALIASES.get(value, "other")


def record_id(source: str, native_id: str) -> str:
    digest = hashlib.sha1(f"{source}\x1f{native_id}".encode("utf-8")).hexdigest()
    return f"{source}:{digest[:16]}"


def content_digest(title: str, doi: Optional[str] = None) -> str:
    payload = f"{normalize_text(title).casefold()}\x1f{doi or ''}"
    return hashlib.sha1(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class Record:
    id: str
    title: str
    abstract: Optional[str] = None
    doi: Optional[str] = None
    doi_prefix: Optional[str] = None
    source: str = "manual"
    record_type: str = "other"
    created_date: Optional[dt.date] = None

    def __post_init__(self):
        if not normalize_text(self.title):
            raise ValueError(f"record {self.id!r} has an empty title")
        if self.source not in SOURCES:
            raise ValueError(f"record {self.id!r}: unknown source {self.source!r}")
        if self.record_type not in RECORD_TYPES:
            raise ValueError(f"record {self.id!r}: unknown record_type {self.record_type!r}")
        if doi_prefix(self.doi) != self.doi_prefix:
            raise ValueError(f"record {self.id!r}: doi_prefix does not match doi")

    @classmethod
    def build(
        cls,
        *,
        source: str,
        title: str,
        native_id: Optional[str] = None,
        abstract: Optional[str] = None,
        doi: Optional[str] = None,
        record_type: Optional[str] = None,
        created_date=None,
    ) -> "Record":
        """Create a record with a derived id and normalized DOI fields."""
        doi = normalize_doi(doi)
        if native_id is None:
            native_id = content_digest(title, doi)
        if isinstance(created_date, str):
            created_date = dt.date.fromisoformat(created_date) if created_date else None
        return cls(
            id=record_id(source, native_id),
            title=normalize_text(title),
            abstract=normalize_text(abstract) if abstract and abstract.strip() else None,
            doi=doi,
            doi_prefix=doi_prefix(doi),
            source=source,
            record_type=normalize_record_type(record_type),
            created_date=created_date,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["created_date"] = self.created_date.isoformat() if self.created_date else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Record":
        created = d.get("created_date")
        return cls(
            id=d["id"],
            title=d["title"],
            abstract=d.get("abstract"),
            doi=d.get("doi"),
            doi_prefix=d.get("doi_prefix"),
            source=d.get("source", "manual"),
            record_type=d.get("record_type", "other"),
            created_date=dt.date.fromisoformat(created) if created else None,
        )


def survivor_key(record: Record):
    """Sort key choosing which of several duplicates is kept."""
    # undated records sort after every dated one
    date = record.created_date or dt.date.max
    return (date, SOURCE_PRIORITY[record.source], record.id)


# --------------------------------------------------------------------------
# PRISMA ledger
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LedgerStage:
    stage_name: str
    records_in: int
    records_excluded: int
    reason: str = ""

    @property
    def records_out(self) -> int:
        return self.records_in - self.records_excluded


@dataclass
class PrismaLedger:
    """Stage-by-stage record counts; each stage starts where the last ended."""

    stages: list[LedgerStage] = field(default_factory=list)

    def add_stage(self, stage_name: str, records_in: int, records_excluded: int, reason: str = "") -> LedgerStage:
        if records_in < 0 or records_excluded < 0:
            raise ValueError("ledger counts must be non-negative")
        if records_excluded > records_in:
            raise ValueError(f"stage {stage_name!r} excludes more records than it received")
        if self.stages and self.stages[-1].records_out != records_in:
            raise ValueError(
                f"stage {stage_name!r} receives {records_in} records but the previous stage "
                f"passed on {self.stages[-1].records_out}"
            )
        stage = LedgerStage(stage_name, records_in, records_excluded, reason)
        self.stages.append(stage)
        return stage

    @property
    def remaining(self) -> Optional[int]:
        return self.stages[-1].records_out if self.stages else None

    def copy(self) -> "PrismaLedger":
        return PrismaLedger(list(self.stages))

    def to_dict(self) -> dict:
        return {"stages": [asdict(s) for s in self.stages]}

    @classmethod
    def from_dict(cls, d: dict) -> "PrismaLedger":
        ledger = cls()
        for s in d.get("stages", []):
            ledger.add_stage(s["stage_name"], s["records_in"], s["records_excluded"], s.get("reason", ""))
        return ledger

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "PrismaLedger":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# --------------------------------------------------------------------------
# Import / export
# --------------------------------------------------------------------------


@dataclass
class ImportResult:
    records: list[Record]
    skipped: list[tuple[int, str]]

    @property
    def rows_read(self) -> int:
        return len(self.records) + len(self.skipped)


def _clean(value):
    if value is None:
        return None
    if isinstance(value, str):
        value = value.strip()
        return value or None
    return value


def _rows(path: Path, fmt: str) -> Iterable[tuple[int, dict]]:
    with path.open(encoding="utf-8", newline="") as fh:
        if fmt == "csv":
            # header is line 1
            for lineno, row in enumerate(csv.DictReader(fh), start=2):
                yield lineno, row
        elif fmt == "jsonl":
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ValueError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
                yield lineno, obj
        else:
            raise ValueError(f"unsupported format {fmt!r}; expected 'jsonl' or 'csv'")


def import_records(path, fmt: Optional[str] = None, ledger: Optional[PrismaLedger] = None) -> ImportResult:
    """Read records from a JSONL or CSV file.

    Rows without a title are skipped and reported with their line number.
    Ids come from ``(source, native_id)``; rows lacking a native id fall back
    to a digest of title and DOI, with an occurrence suffix if the digest
    repeats inside the file. If ``ledger`` is given an ``import`` stage is
    appended.
    """
    path = Path(path)
    if fmt is None:
        fmt = "csv" if path.suffix.lower() == ".csv" else "jsonl"
    records: list[Record] = []
    skipped: list[tuple[int, str]] = []
    seen: dict[str, int] = {}
    for lineno, row in _rows(path, fmt):
        title = _clean(row.get("title"))
        if not title or not normalize_text(str(title)):
            skipped.append((lineno, "missing title"))
            logger.warning("%s:%d: row has no title, skipped", path, lineno)
            continue
        source = _clean(row.get("source")) or "manual"
        if source not in SOURCES:
            skipped.append((lineno, f"unknown source {source!r}"))
            logger.warning("%s:%d: unknown source %r, skipped", path, lineno, source)
            continue
        doi = normalize_doi(_clean(row.get("doi")))
        native = _clean(row.get("native_id")) or _clean(row.get("id")) or doi or content_digest(title, doi)
        native = str(native)
        n = seen.get(f"{source}|{native}", 0)
        seen[f"{source}|{native}"] = n + 1
        if n:
            native = f"{native}#{n + 1}"
        try:
            rec = Record.build(
                source=source,
                title=str(title),
                native_id=native,
                abstract=_clean(row.get("abstract")),
                doi=doi,
                record_type=_clean(row.get("record_type")) or _clean(row.get("type")),
                created_date=_clean(row.get("created_date")),
            )
        except ValueError as exc:
            skipped.append((lineno, str(exc)))
            logger.warning("%s:%d: %s, skipped", path, lineno, exc)
            continue
        records.append(rec)
    result = ImportResult(records, skipped)
    if ledger is not None:
        reason = f"{len(skipped)} unreadable rows" if skipped else ""
        ledger.add_stage(f"import:{path.name}", result.rows_read, len(skipped), reason)
    return result


def write_jsonl(records: Iterable[Record], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict(), ensure_ascii=False) + "\n")


def read_jsonl(path) -> list[Record]:
    """Read records previously written by :func:`write_jsonl`."""
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(Record.from_dict(json.loads(line)))
    return out


# --------------------------------------------------------------------------
# Classification and DOI deduplication
# --------------------------------------------------------------------------


def classify_grey(record: Record) -> bool:
    """True for posted content, proceedings and reports."""
    return record.record_type in GREY_TYPES


def dedup_by_doi(records: list[Record], mode: str = "full") -> tuple[list[Record], list[Record]]:
    """Collapse records sharing a DOI (``full``) or a DOI registrant prefix (``prefix``).

    ``prefix`` merges unrelated papers from the same publisher; use it only for
    publication-trend counts, never to build a screening corpus. Records with no
    DOI are always kept. Output preserves input order.
    """
    if mode not in ("full", "prefix"):
        raise ValueError(f"mode must be 'full' or 'prefix', got {mode!r}")
    groups: dict[str, list[int]] = {}
    for i, rec in enumerate(records):
        key = rec.doi if mode == "full" else rec.doi_prefix
        if key:
            groups.setdefault(key, []).append(i)
    drop = set()
    for members in groups.values():
        if len(members) > 1:
            keep = min(members, key=lambda i: survivor_key(records[i]))
            drop.update(i for i in members if i != keep)
    kept = [r for i, r in enumerate(records) if i not in drop]
    removed = [r for i, r in enumerate(records) if i in drop]
    return kept, removed
