"""HTTP-backed gateway: OpenAI-compatible chat, a SERP provider, static fetch."""

from __future__ import annotations

import base64
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from typing import Callable

import httpx

from .base import (
    GENERATION,
    VISUAL,
    AuthError,
    ChatRequest,
    FetchError,
    GatewayError,
    GatewayTimeout,
    MalformedResponse,
    ScrapedPage,
    SearchResult,
    VisionRejected,
)
from .scrape import html_to_page

logger = logging.getLogger(__name__)

_RETRY_STATUS = {408, 409, 425, 429, 500, 502, 503, 504}


@dataclass
class Endpoint:
    base_url: str = "https://api.openai.com/v1"
    model: str = "gpt-4o-mini"
    api_key_env: str = "OPENAI_API_KEY"

    def api_key(self) -> str:
        key = os.environ.get(self.api_key_env, "")
        if not key:
            raise AuthError(f"environment variable {self.api_key_env} is not set")
        return key


@dataclass
class SearchProvider:
    """``serper`` (google.serper.dev) or ``searxng`` (self-hosted JSON API)."""

    kind: str = "serper"
    base_url: str = "https://google.serper.dev"
    api_key_env: str = "SERPER_API_KEY"


@dataclass
class HttpSettings:
    endpoints: dict[str, Endpoint] = field(
        default_factory=lambda: {GENERATION: Endpoint(), VISUAL: Endpoint()}
    )
    search: SearchProvider = field(default_factory=SearchProvider)
    attempts: int = 3
    backoff_seconds: float = 1.0
    max_concurrent: int = 8
    fetch_timeout: float = 30.0
    probe_images: bool = True
    image_window: int = 140
    user_agent: str = "figreport/0.1 (+research crawler)"


def _image_part(img: bytes | str) -> dict:
    if isinstance(img, bytes):
        url = "data:image/png;base64," + base64.b64encode(img).decode("ascii")
    else:
        url = img
    return {"type": "image_url", "image_url": {"url": url}}


class HttpGateway:
    """Talks to real providers. Safe to share between threads."""

    def __init__(
        self,
        settings: HttpSettings | None = None,
        *,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.settings = settings or HttpSettings()
        self._client = httpx.Client(
            transport=transport,
            follow_redirects=True,
            headers={"User-Agent": self.settings.user_agent},
        )
        self._slots = threading.BoundedSemaphore(self.settings.max_concurrent)
        self._sleep = sleep
        self.attempt_log: list[tuple[str, int, str]] = []

    def close(self) -> None:
        self._client.close()

    # -- chat ---------------------------------------------------------------

    def chat(self, request: ChatRequest) -> str:
        endpoint = self.settings.endpoints.get(request.role) or self.settings.endpoints[GENERATION]
        messages = []
        if request.system:
            messages.append({"role": "system", "content": request.system})
        if request.images:
            content = [{"type": "text", "text": request.user}] + [_image_part(i) for i in request.images]
            messages.append({"role": "user", "content": content})
        else:
            messages.append({"role": "user", "content": request.user})
        payload = {"model": endpoint.model, "messages": messages, "temperature": request.temperature}
        headers = {"Authorization": f"Bearer {endpoint.api_key()}"}
        url = endpoint.base_url.rstrip("/") + "/chat/completions"

        response = self._post_with_retry(url, payload, headers, request.timeout_seconds, request.template)
        if response.status_code in (400, 422) and request.images:
            raise VisionRejected(f"vision request rejected: {response.text[:200]}")
        if response.status_code >= 400:
            raise GatewayError(f"chat failed with HTTP {response.status_code}: {response.text[:200]}")
        try:
            return response.json()["choices"][0]["message"]["content"] or ""
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse(f"unexpected chat payload: {response.text[:200]}") from exc

    def _post_with_retry(self, url: str, payload: dict, headers: dict, timeout: float, label: str) -> httpx.Response:
        attempts = self.settings.attempts
        for attempt in range(1, attempts + 1):
            try:
                with self._slots:
                    response = self._client.post(url, json=payload, headers=headers, timeout=timeout)
            except httpx.TimeoutException as exc:
                self.attempt_log.append((label, attempt, "timeout"))
                if attempt == attempts:
                    raise GatewayTimeout(f"{label or 'chat'} timed out after {attempts} attempts") from exc
            except httpx.TransportError as exc:
                self.attempt_log.append((label, attempt, f"transport: {exc}"))
                if attempt == attempts:
                    raise GatewayError(f"{label or 'chat'} failed: {exc}") from exc
            else:
                self.attempt_log.append((label, attempt, str(response.status_code)))
                if response.status_code in (401, 403):
                    raise AuthError(f"provider rejected credentials (HTTP {response.status_code})")
                if response.status_code not in _RETRY_STATUS or attempt == attempts:
                    return response
            delay = self.settings.backoff_seconds * 2 ** (attempt - 1)
            logger.warning("%s: attempt %d/%d failed, retrying in %.1fs", label or "chat", attempt, attempts, delay)
            self._sleep(delay)
        raise AssertionError("unreachable")

    # -- search -------------------------------------------------------------

    def search(self, query: str, top_k: int) -> list[SearchResult]:
        if top_k < 1:
            raise ValueError("top_k must be >= 1")
        provider = self.settings.search
        try:
            with self._slots:
                if provider.kind == "serper":
                    key = os.environ.get(provider.api_key_env, "")
                    response = self._client.post(
                        provider.base_url.rstrip("/") + "/search",
                        json={"q": query, "num": top_k},
                        headers={"X-API-KEY": key},
                        timeout=self.settings.fetch_timeout,
                    )
                    response.raise_for_status()
                    rows = [
                        (r.get("link", ""), r.get("title", ""), r.get("snippet", ""))
                        for r in response.json().get("organic", [])
                    ]
                elif provider.kind == "searxng":
                    response = self._client.get(
                        provider.base_url.rstrip("/") + "/search",
                        params={"q": query, "format": "json"},
                        timeout=self.settings.fetch_timeout,
                    )
                    response.raise_for_status()
                    rows = [
                        (r.get("url", ""), r.get("title", ""), r.get("content", ""))
                        for r in response.json().get("results", [])
                    ]
                else:
                    raise ValueError(f"unknown search provider {provider.kind!r}")
        except (httpx.HTTPError, ValueError) as exc:
            logger.warning("search failed for %r: %s", query, exc)
            return []
        return [SearchResult(u, t, s) for u, t, s in rows if u][:top_k]

    # -- fetch --------------------------------------------------------------

    def _probe(self, url: str) -> tuple[str | None, int | None]:
        try:
            with self._slots:
                response = self._client.head(url, timeout=self.settings.fetch_timeout)
        except httpx.HTTPError:
            return None, None
        if response.status_code >= 400:
            return None, None
        ctype = response.headers.get("content-type")
        length = response.headers.get("content-length")
        return (ctype.split(";")[0].strip().lower() if ctype else None, int(length) if length and length.isdigit() else None)

    def fetch_page(self, url: str) -> ScrapedPage:
        if not url.startswith(("http://", "https://")):
            raise FetchError(f"not an absolute http(s) URL: {url}")
        try:
            with self._slots:
                response = self._client.get(url, timeout=self.settings.fetch_timeout)
        except httpx.HTTPError as exc:
            raise FetchError(f"fetch failed for {url}: {exc}") from exc
        if response.status_code >= 400:
            raise FetchError(f"fetch failed for {url}: HTTP {response.status_code}")
        ctype = response.headers.get("content-type", "").lower()
        if "html" not in ctype:
            raise FetchError(f"{url} is not HTML ({ctype or 'no content type'})")
        probe = self._probe if self.settings.probe_images else None
        return html_to_page(str(response.url), response.text, window=self.settings.image_window, probe=probe)
