"""Deterministic gateways for tests and offline runs, plus the call cache.

Transcript / cache file format (JSON)::

    {
      "schema": 1,
      "chat": [{"hash": "<ChatRequest.cache_key()>", "template": "...", "response": "..."}],
      "chat_by_template": {"<template name>": "fallback response"},
      "search": [{"query": "...", "results": [{"url": "...", "title": "...", "snippet": "..."}]}],
      "pages": [{"url": "...", "page": {ScrapedPage fields}} | {"url": "...", "html": "..."}],
      "image_meta": {"<image url>": {"content_type": "image/png", "file_size_bytes": 123}}
    }

A :class:`CachingGateway` writes exactly this format, so a recorded run can
be replayed with :meth:`MockGateway.from_transcript`.
"""

from __future__ import annotations

import json
import logging
import threading
from pathlib import Path
from typing import Callable, Mapping, Union

from .base import ChatRequest, FetchError, GatewayError, ScrapedPage, SearchResult, TranscriptMiss
from .scrape import html_to_page

logger = logging.getLogger(__name__)

Responder = Union[str, Callable[[ChatRequest], str]]
TRANSCRIPT_SCHEMA = 1


class MockGateway:
    """Answers from fixed tables; identical inputs always give identical outputs.

    Chat lookup order: exact request hash, then a responder registered for
    the request's template, then the ``"*"`` responder. A miss raises
    :class:`TranscriptMiss`.
    """

    def __init__(
        self,
        *,
        chat: Mapping[str, str] | None = None,
        responders: Mapping[str, Responder] | None = None,
        search: Mapping[str, list[SearchResult]] | Callable[[str], list[SearchResult]] | None = None,
        pages: Mapping[str, ScrapedPage | str] | None = None,
        image_meta: Mapping[str, tuple[str | None, int | None]] | None = None,
        window: int = 140,
    ):
        self._chat = dict(chat or {})
        self._responders = dict(responders or {})
        self._search = search if callable(search) else dict(search or {})
        self._pages = dict(pages or {})
        self._image_meta = dict(image_meta or {})
        self._window = window
        self._lock = threading.Lock()
        self.calls: list[tuple[str, str]] = []

    def _log(self, kind: str, detail: str) -> None:
        with self._lock:
            self.calls.append((kind, detail))

    def count(self, kind: str, detail: str | None = None) -> int:
        with self._lock:
            return sum(1 for k, d in self.calls if k == kind and (detail is None or d == detail))

    def chat(self, request: ChatRequest) -> str:
        self._log("chat", request.template)
        key = request.cache_key()
        if key in self._chat:
            return self._chat[key]
        responder = self._responders.get(request.template, self._responders.get("*"))
        if responder is None:
            raise TranscriptMiss(f"no recorded response for {request.template or 'chat'} request {key[:12]}")
        return responder(request) if callable(responder) else responder

    def search(self, query: str, top_k: int) -> list[SearchResult]:
        if top_k < 1:
            raise ValueError("top_k must be >= 1")
        self._log("search", query)
        try:
            if callable(self._search):
                results = self._search(query)
            else:
                results = self._search.get(query, self._search.get("*", []))
        except GatewayError as exc:
            logger.warning("search failed for %r: %s", query, exc)
            return []
        return list(results)[:top_k]

    def _probe(self, url: str) -> tuple[str | None, int | None]:
        return self._image_meta.get(url, (None, None))

    def fetch_page(self, url: str) -> ScrapedPage:
        self._log("fetch", url)
        page = self._pages.get(url)
        if page is None:
            raise FetchError(f"no fixture page for {url}")
        if isinstance(page, str):
            return html_to_page(url, page, window=self._window, probe=self._probe)
        return page

    @classmethod
    def from_transcript(cls, path: str | Path, *, window: int = 140) -> MockGateway:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if data.get("schema") != TRANSCRIPT_SCHEMA:
            raise ValueError(f"unsupported transcript schema {data.get('schema')!r}")
        pages: dict[str, ScrapedPage | str] = {}
        for entry in data.get("pages", []):
            pages[entry["url"]] = ScrapedPage.from_dict(entry["page"]) if "page" in entry else entry["html"]
        return cls(
            chat={e["hash"]: e["response"] for e in data.get("chat", [])},
            responders=dict(data.get("chat_by_template", {})),
            search={
                e["query"]: [SearchResult(**r) for r in e["results"]] for e in data.get("search", [])
            },
            pages=pages,
            image_meta={
                u: (m.get("content_type"), m.get("file_size_bytes")) for u, m in data.get("image_meta", {}).items()
            },
            window=window,
        )


class CachingGateway:
    """Memoizes chat, search and fetch calls of an inner gateway by request hash.

    Failed calls are not cached. ``save`` writes a replayable transcript.
    """

    def __init__(self, inner, path: str | Path | None = None):
        self.inner = inner
        self.path = Path(path) if path else None
        self._lock = threading.Lock()
        self._chat: dict[str, tuple[str, str]] = {}
        self._search: dict[str, list[SearchResult]] = {}
        self._pages: dict[str, ScrapedPage] = {}
        self.hits = 0
        self.misses = 0
        if self.path and self.path.exists():
            self._load(self.path)

    def _load(self, path: Path) -> None:
        data = json.loads(path.read_text(encoding="utf-8"))
        for e in data.get("chat", []):
            self._chat[e["hash"]] = (e.get("template", ""), e["response"])
        for e in data.get("search", []):
            self._search[e["query"]] = [SearchResult(**r) for r in e["results"]]
        for e in data.get("pages", []):
            if "page" in e:
                self._pages[e["url"]] = ScrapedPage.from_dict(e["page"])

    def chat(self, request: ChatRequest) -> str:
        key = request.cache_key()
        with self._lock:
            if key in self._chat:
                self.hits += 1
                return self._chat[key][1]
        response = self.inner.chat(request)
        with self._lock:
            self.misses += 1
            self._chat[key] = (request.template, response)
        return response

    def search(self, query: str, top_k: int) -> list[SearchResult]:
        with self._lock:
            if query in self._search and len(self._search[query]) >= top_k:
                self.hits += 1
                return self._search[query][:top_k]
        results = self.inner.search(query, top_k)
        if results:
            with self._lock:
                self.misses += 1
                self._search[query] = list(results)
        return results

    def fetch_page(self, url: str) -> ScrapedPage:
        with self._lock:
            if url in self._pages:
                self.hits += 1
                return self._pages[url]
        page = self.inner.fetch_page(url)
        with self._lock:
            self.misses += 1
            self._pages[url] = page
        return page

    def to_transcript(self) -> dict:
        with self._lock:
            return {
                "schema": TRANSCRIPT_SCHEMA,
                "chat": [
                    {"hash": k, "template": t, "response": r} for k, (t, r) in sorted(self._chat.items())
                ],
                "search": [
                    {"query": q, "results": [r.__dict__ for r in rs]} for q, rs in sorted(self._search.items())
                ],
                "pages": [{"url": u, "page": p.to_dict()} for u, p in sorted(self._pages.items())],
            }

    def save(self, path: str | Path | None = None) -> Path:
        target = Path(path) if path else self.path
        if target is None:
            raise ValueError("no cache path configured")
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(json.dumps(self.to_transcript(), indent=1, ensure_ascii=False) + "\n", encoding="utf-8")
        return target
