"""Knowledge-base clients: fetch related terms over HTTP, cache, and fall back.

Two term sources sit behind one client. Related Words answers single-topic
queries; Reverse Dictionary handles multi-word phrases and is only consulted
when Related Words yields no term with a positive score. The retrieval
threshold is exactly zero: a term is kept iff its score is strictly positive.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable

import httpx

from .errors import KBParseError, RetrievalError
from .verbalizer import ClassLabel, LabelTerm, Source

log = logging.getLogger(__name__)

RETRIEVAL_THRESHOLD = 0.0


@dataclass(frozen=True)
class KBResponseItem:
    word: str
    score: float


@dataclass(frozen=True)
class RetrievalResult:
    """One KB response for one query, in KB order."""

    query: str
    source: Source
    items: tuple[KBResponseItem, ...]
    fetched_at: str
    from_cache: bool = False


@dataclass(frozen=True)
class ClientConfig:
    related_words_url: str = "https://relatedwords.org/api/related"
    reverse_dictionary_url: str = "https://reversedictionary.org/api/related"
    max_attempts: int = 3
    backoff_start: float = 0.5
    timeout: float = 10.0
    max_in_flight: int = 2
    min_request_interval: float = 0.2


def _parse_items(payload, source: Source, query: str) -> tuple[KBResponseItem, ...]:
    """Normalize a KB payload to (word, score) pairs.

    Both KBs answer with a JSON array of objects; Reverse Dictionary omits the
    score on some entries, which counts as zero (below threshold).
    """
    if not isinstance(payload, list):
        raise KBParseError(f"{source.value} response for {query!r}: expected a JSON array")
    items = []
    for i, entry in enumerate(payload):
        if not isinstance(entry, dict) or "word" not in entry:
            raise KBParseError(f"{source.value} response for {query!r}: item {i} has no 'word'")
        if source is Source.RELATED_WORDS:
            if "score" not in entry:
                raise KBParseError(f"{source.value} response for {query!r}: item {i} has no 'score'")
            score = entry["score"]
        else:
            score = entry.get("score", 0.0)
        try:
            score = float(score)
        except (TypeError, ValueError) as e:
            raise KBParseError(f"{source.value} response for {query!r}: item {i}: {e}") from e
        if not math.isfinite(score):
            raise KBParseError(f"{source.value} response for {query!r}: item {i}: non-finite score")
        items.append(KBResponseItem(word=str(entry["word"]), score=score))
    return tuple(items)


class KBClient:
    """HTTP client for both KBs with retries, pacing, and bounded concurrency."""

    def __init__(self, config: ClientConfig | None = None, transport: httpx.BaseTransport | None = None):
        self.config = config or ClientConfig()
        self._client = httpx.Client(transport=transport, timeout=self.config.timeout)
        self._gate = threading.Semaphore(self.config.max_in_flight)
        self._pace_lock = threading.Lock()
        self._last_request = 0.0

    def close(self) -> None:
        self._client.close()

    def __enter__(self) -> "KBClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _pace(self) -> None:
        with self._pace_lock:
            wait = self._last_request + self.config.min_request_interval - time.monotonic()
            if wait > 0:
                time.sleep(wait)
            self._last_request = time.monotonic()

    def _get(self, base_url: str, query: str) -> httpx.Response:
        attempts = max(1, self.config.max_attempts)
        delay = self.config.backoff_start
        last_status: int | None = None
        last_error = "no attempt made"
        for attempt in range(attempts):
            if attempt:
                time.sleep(delay)
                delay *= 2
            try:
                with self._gate:
                    self._pace()
                    resp = self._client.get(base_url, params={"query": query})
            except httpx.HTTPError as e:
                last_error = f"{type(e).__name__}: {e}"
                continue
            if resp.status_code == 200:
                return resp
            last_status = resp.status_code
            last_error = f"HTTP {resp.status_code}"
            if resp.status_code not in (429,) and resp.status_code < 500:
                break  # client errors are not retried
        raise RetrievalError(
            f"GET {base_url} query={query!r} failed after {attempts} attempt(s): {last_error}",
            query=query,
            status=last_status,
        )

    def _fetch(self, base_url: str, source: Source, query: str) -> RetrievalResult:
        if not query.strip():
            raise ValueError("query must be non-empty")
        resp = self._get(base_url, query)
        try:
            payload = resp.json()
        except (json.JSONDecodeError, ValueError) as e:
            raise KBParseError(f"{source.value} response for {query!r} is not valid JSON: {e}") from e
        return RetrievalResult(
            query=query,
            source=source,
            items=_parse_items(payload, source, query),
            fetched_at=datetime.now(timezone.utc).isoformat(),
        )

    def fetch_related_words(self, query: str) -> RetrievalResult:
        return self._fetch(self.config.related_words_url, Source.RELATED_WORDS, query)

    def fetch_reverse_dictionary(self, query: str) -> RetrievalResult:
        return self._fetch(self.config.reverse_dictionary_url, Source.REVERSE_DICTIONARY, query)

    def retrieve_terms(self, cls: ClassLabel) -> list[LabelTerm]:
        return _retrieve_with_fallback(
            cls.query_text, self.fetch_related_words, self.fetch_reverse_dictionary
        )


def _positive_terms(result: RetrievalResult) -> list[LabelTerm]:
    terms = []
    for item in result.items:
        if item.score <= RETRIEVAL_THRESHOLD or not item.word.strip():
            continue
        terms.append(LabelTerm(text=item.word, kb_score=item.score, source=result.source))
    return terms


Fetcher = Callable[[str], RetrievalResult]


def _retrieve_with_fallback(query: str, fetch_rw: Fetcher, fetch_rd: Fetcher) -> list[LabelTerm]:
    """Related Words first; Reverse Dictionary only when RW has no positive score.

    A single failing KB falls through to the other; only both failing raises.
    """
    errors: list[Exception] = []
    try:
        terms = _positive_terms(fetch_rw(query))
        if terms:
            return terms
    except (RetrievalError, KBParseError) as e:
        errors.append(e)
    try:
        return _positive_terms(fetch_rd(query))
    except (RetrievalError, KBParseError) as e:
        errors.append(e)
    if len(errors) == 2:
        raise RetrievalError(
            f"both knowledge bases failed for {query!r}: " + "; ".join(str(e) for e in errors),
            query=query,
        )
    return []


# -- deterministic file cache ------------------------------------------------


class FileCache:
    """One JSON file per (source, query); writes are atomic (tmp + rename)."""

    def __init__(self, cache_dir: str | Path):
        self.cache_dir = Path(cache_dir)

    def path_for(self, source: Source, query: str) -> Path:
        digest = hashlib.sha256(query.encode("utf-8")).hexdigest()
        return self.cache_dir / source.value / f"{digest}.json"

    def load(self, source: Source, query: str) -> RetrievalResult | None:
        path = self.path_for(source, query)
        if not path.exists():
            return None
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
            items = tuple(KBResponseItem(word=i["word"], score=float(i["score"])) for i in doc["items"])
            if doc["query"] != query or doc["source"] != source.value:
                raise KBParseError("cache entry does not match its key")
            return RetrievalResult(
                query=query,
                source=source,
                items=items,
                fetched_at=doc["fetched_at"],
                from_cache=True,
            )
        except (OSError, KeyError, TypeError, ValueError, KBParseError) as e:
            log.warning("corrupt cache entry %s (%s); refetching", path, e)
            return None

    def store(self, result: RetrievalResult) -> Path:
        path = self.path_for(result.source, result.query)
        path.parent.mkdir(parents=True, exist_ok=True)
        doc = {
            "query": result.query,
            "source": result.source.value,
            "items": [{"word": i.word, "score": i.score} for i in result.items],
            "fetched_at": result.fetched_at,
        }
        tmp = path.with_name(path.name + f".tmp{os.getpid()}")
        tmp.write_text(json.dumps(doc, sort_keys=True, ensure_ascii=False), encoding="utf-8")
        os.replace(tmp, path)
        return path


def _cached_fetcher(cache: FileCache, source: Source, fetch: Fetcher) -> Fetcher:
    def fetcher(query: str) -> RetrievalResult:
        hit = cache.load(source, query)
        if hit is not None:
            return hit
        result = fetch(query)
        cache.store(result)
        return result

    return fetcher


def cached_retrieve(client: KBClient, cls: ClassLabel, cache_dir: str | Path) -> list[LabelTerm]:
    """retrieve_terms with a write-through cache under cache_dir."""
    cache = FileCache(cache_dir)
    return _retrieve_with_fallback(
        cls.query_text,
        _cached_fetcher(cache, Source.RELATED_WORDS, client.fetch_related_words),
        _cached_fetcher(cache, Source.REVERSE_DICTIONARY, client.fetch_reverse_dictionary),
    )
