"""Remote harvesting from Crossref (cursor paging) and PubMed E-utilities.

Both clients talk to the network through a ``session`` object exposing
``get(url, params=..., timeout=...)`` (a :class:`requests.Session` by default),
so tests can substitute a fake transport.
"""

from __future__ import annotations

import datetime as dt
import logging
import re
import threading
import time
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from typing import Callable, Optional

import requests

from .records import Record, normalize_text

logger = logging.getLogger(__name__)

CROSSREF_URL = "https://api.crossref.org"
EUTILS_URL = "https://eutils.ncbi.nlm.nih.gov/entrez/eutils"


class HarvestError(RuntimeError):
    """Raised when a remote source cannot be read."""


@dataclass(frozen=True)
class SourceConfig:
    base_url: str
    contact: str = ""
    delay: float = 0.1
    page_size: int = 100
    max_retries: int = 4
    backoff: float = 0.5
    backoff_cap: float = 8.0
    timeout: float = 30.0

    @classmethod
    def crossref(cls, contact: str = "", **kw) -> "SourceConfig":
        return cls(base_url=CROSSREF_URL, contact=contact, **kw)

    @classmethod
    def pubmed(cls, contact: str = "", **kw) -> "SourceConfig":
        return cls(base_url=EUTILS_URL, contact=contact, **kw)


class RateLimiter:
    """Serializes requests to one source and spaces them by ``delay`` seconds."""

    def __init__(self, delay: float, sleep: Callable[[float], None] = time.sleep,
                 clock: Callable[[], float] = time.monotonic):
        self.delay = delay
        self._sleep = sleep
        self._clock = clock
        self._last: Optional[float] = None
        self._lock = threading.Lock()

    def wait(self):
        with self._lock:
            if self._last is not None:
                remaining = self.delay - (self._clock() - self._last)
                if remaining > 0:
                    self._sleep(remaining)
            self._last = self._clock()


_limiters: dict[str, RateLimiter] = {}
_limiters_lock = threading.Lock()


def _shared_limiter(config: "SourceConfig") -> RateLimiter:
    with _limiters_lock:
        lim = _limiters.get(config.base_url)
        if lim is None or lim.delay != config.delay:
            lim = _limiters[config.base_url] = RateLimiter(config.delay)
        return lim


class _Client:
    def __init__(self, config: SourceConfig, session=None, sleep: Optional[Callable[[float], None]] = None,
                 limiter: Optional[RateLimiter] = None):
        self.config = config
        self.session = session if session is not None else requests.Session()
        self._sleep = sleep or time.sleep
        if limiter is None:
            limiter = RateLimiter(config.delay, sleep) if sleep else _shared_limiter(config)
        self.limiter = limiter

    def get(self, url: str, params: dict):
        cfg = self.config
        attempt = 0
        while True:
            self.limiter.wait()
            try:
                resp = self.session.get(url, params=params, timeout=cfg.timeout)
            except (requests.ConnectionError, requests.Timeout, ConnectionError, TimeoutError) as exc:
                err: Exception = exc
            else:
                status = resp.status_code
                if 400 <= status < 500 and status != 429:
                    raise HarvestError(f"{url} returned HTTP {status}")
                if status < 400:
                    return resp
                err = HarvestError(f"{url} returned HTTP {status}")
            attempt += 1
            if attempt > cfg.max_retries:
                raise HarvestError(f"{url}: giving up after {cfg.max_retries} retries") from err
            pause = min(cfg.backoff * 2 ** (attempt - 1), cfg.backoff_cap)
            logger.info("request to %s failed (%s); retry %d in %.1fs", url, err, attempt, pause)
            self._sleep(pause)


# --------------------------------------------------------------------------
# Crossref
# --------------------------------------------------------------------------


def _crossref_date(item: dict) -> Optional[dt.date]:
    for key in ("created", "issued", "published"):
        parts = (item.get(key) or {}).get("date-parts") or []
        if parts and parts[0] and parts[0][0]:
            p = list(parts[0]) + [1, 1]
            try:
                return dt.date(int(p[0]), int(p[1]), int(p[2]))
            except (TypeError, ValueError):
                continue
    return None


def _strip_tags(text: Optional[str]) -> Optional[str]:
    if not text:
        return None
    return re.sub(r"<[^>]+>", " ", text)


def crossref_record(item: dict) -> Optional[Record]:
    titles = item.get("title") or []
    title = titles[0] if isinstance(titles, list) and titles else titles
    if not title or not normalize_text(str(title)):
        return None
    doi = item.get("DOI")
    return Record.build(
        source="crossref",
        native_id=doi,
        title=str(title),
        abstract=_strip_tags(item.get("abstract")),
        doi=doi,
        record_type=item.get("type"),
        created_date=_crossref_date(item),
    )


class CrossrefClient(_Client):
    """Cursor-paged ``/works`` search.

    Crossref only supports case-insensitive exact-word matching reliably, so
    with ``exact_word`` (default) the query must be a single word and returned
    items are kept only when their title contains that word.
    """

    def search(self, query: str, cursor: Optional[str] = None, exact_word: bool = True):
        query = query.strip()
        if not query:
            raise ValueError("query must be non-empty")
        if exact_word and not re.fullmatch(r"[\w-]+", query):
            raise ValueError("exact-word Crossref search takes a single word")
        cursor = cursor or "*"
        params = {"query.bibliographic": query, "rows": self.config.page_size, "cursor": cursor}
        if self.config.contact:
            params["mailto"] = self.config.contact
        resp = self.get(f"{self.config.base_url}/works", params)
        try:
            message = resp.json()["message"]
            items = message.get("items") or []
        except (ValueError, KeyError, TypeError, AttributeError) as exc:
            raise HarvestError("malformed Crossref response") from exc
        word = re.compile(rf"\b{re.escape(query)}\b", re.IGNORECASE)
        batch = []
        for item in items[: self.config.page_size]:
            rec = crossref_record(item)
            if rec is None:
                continue
            if exact_word and not word.search(rec.title):
                continue
            batch.append(rec)
        nxt = message.get("next-cursor")
        if not items or len(items) < self.config.page_size or not nxt or nxt == cursor:
            nxt = None
        return batch, nxt


# --------------------------------------------------------------------------
# PubMed
# --------------------------------------------------------------------------

_MONTHS = {m: i for i, m in enumerate(
    ["jan", "feb", "mar", "apr", "may", "jun", "jul", "aug", "sep", "oct", "nov", "dec"], start=1)}


def _xml_date(node) -> Optional[dt.date]:
    if node is None:
        return None
    year = node.findtext("Year")
    if not year or not year.isdigit():
        return None
    month = (node.findtext("Month") or "1").strip()
    month_num = int(month) if month.isdigit() else _MONTHS.get(month[:3].lower(), 1)
    day = node.findtext("Day") or "1"
    try:
        return dt.date(int(year), month_num, int(day) if day.isdigit() else 1)
    except ValueError:
        return dt.date(int(year), 1, 1)


def pubmed_records(xml_text: str) -> list[Record]:
    try:
        root = ET.fromstring(xml_text)
    except ET.ParseError as exc:
        raise HarvestError("malformed efetch XML") from exc
    out = []
    for art in root.iter("PubmedArticle"):
        pmid = art.findtext(".//MedlineCitation/PMID")
        title_node = art.find(".//Article/ArticleTitle")
        title = "".join(title_node.itertext()) if title_node is not None else ""
        if not pmid or not normalize_text(title):
            continue
        parts = ["".join(a.itertext()) for a in art.findall(".//Abstract/AbstractText")]
        abstract = " ".join(p for p in parts if p.strip()) or None
        doi = None
        for aid in art.findall(".//PubmedData/ArticleIdList/ArticleId"):
            if aid.get("IdType") == "doi" and aid.text:
                doi = aid.text
        created = (_xml_date(art.find(".//MedlineCitation/DateCompleted"))
                   or _xml_date(art.find(".//Article/ArticleDate"))
                   or _xml_date(art.find(".//Article/Journal/JournalIssue/PubDate")))
        ptypes = {p.text.lower() for p in art.findall(".//PublicationTypeList/PublicationType") if p.text}
        rtype = "journal_article" if "journal article" in ptypes else "other"
        out.append(Record.build(source="pubmed", native_id=pmid, title=title, abstract=abstract,
                                doi=doi, record_type=rtype, created_date=created))
    return out


class PubMedClient(_Client):
    """esearch for ids, then efetch for the page; page tokens are retstart offsets."""

    def _params(self, **kw):
        p = {"db": "pubmed", "tool": "casma"}
        if self.config.contact:
            p["email"] = self.config.contact
        p.update(kw)
        return p

    def search(self, query: str, page_token: Optional[str] = None):
        query = query.strip()
        if not query:
            raise ValueError("query must be non-empty")
        start = int(page_token) if page_token else 0
        size = self.config.page_size
        resp = self.get(f"{self.config.base_url}/esearch.fcgi",
                        self._params(term=query, retstart=start, retmax=size, retmode="json"))
        try:
            result = resp.json()["esearchresult"]
            count = int(result["count"])
            ids = list(result.get("idlist") or [])
        except (ValueError, KeyError, TypeError, AttributeError) as exc:
            raise HarvestError("malformed esearch response") from exc
        if not ids:
            return [], None
        resp = self.get(f"{self.config.base_url}/efetch.fcgi",
                        self._params(id=",".join(ids[:size]), retmode="xml"))
        batch = pubmed_records(resp.text)[:size]
        nxt = start + size
        return batch, (str(nxt) if nxt < count else None)


def _client(source: str, config: SourceConfig, session, sleep, limiter) -> _Client:
    if source == "crossref":
        return CrossrefClient(config, session, sleep, limiter)
    if source == "pubmed":
        return PubMedClient(config, session, sleep, limiter)
    raise ValueError(f"unsupported remote source {source!r}")


def fetch_remote(source: str, query: str, page_token: Optional[str], config: SourceConfig, session=None,
                 sleep: Optional[Callable[[float], None]] = None, limiter: Optional[RateLimiter] = None):
    """Fetch one page of records; returns ``(batch, next_token)``.

    Without an explicit ``limiter`` (or ``sleep``), calls against the same base
    URL share one process-wide limiter, so consecutive pages stay spaced.
    """
    return _client(source, config, session, sleep, limiter).search(query, page_token)


def harvest_all(source: str, query: str, config: SourceConfig, session=None, max_pages: Optional[int] = None,
                sleep: Optional[Callable[[float], None]] = None, limiter: Optional[RateLimiter] = None
                ) -> list[Record]:
    """Follow page tokens until exhausted; a repeated token stops the walk."""
    client = _client(source, config, session, sleep, limiter)
    records, seen, token, pages = [], set(), None, 0
    while True:
        batch, token = client.search(query, token)
        records.extend(batch)
        pages += 1
        if token is None or token in seen or (max_pages and pages >= max_pages):
            break
        seen.add(token)
    return records
