from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Protocol, Union

ImagePayload = Union[bytes, str]

GENERATION = "generation"
VISUAL = "visual"

PAGE_CHAR_LIMIT = 8000


class GatewayError(Exception):
    """Base class for provider failures. Recoverable unless noted."""


class AuthError(GatewayError):
    """Credentials rejected. Fatal: retrying will not help."""


class GatewayTimeout(GatewayError):
    pass


class MalformedResponse(GatewayError):
    pass


class VisionRejected(GatewayError):
    """The vision model refused the supplied image."""


class FetchError(GatewayError):
    pass


class TranscriptMiss(GatewayError):
    """A mock gateway has no recorded answer for the request."""


@dataclass(frozen=True)
class ChatRequest:
    system: str
    user: str
    temperature: float = 0.7
    timeout_seconds: int = 300
    images: tuple[ImagePayload, ...] = ()
    role: str = GENERATION
    template: str = ""

    def __post_init__(self) -> None:
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature {self.temperature} outside [0, 2]")
        if self.timeout_seconds <= 0:
            raise ValueError("timeout_seconds must be positive")

    def cache_key(self) -> str:
        images = [
            "sha256:" + hashlib.sha256(img).hexdigest() if isinstance(img, bytes) else img for img in self.images
        ]
        blob = json.dumps(
            [self.role, self.system, self.user, self.temperature, images], ensure_ascii=False, separators=(",", ":")
        )
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class SearchResult:
    url: str
    title: str = ""
    snippet: str = ""

    def __post_init__(self) -> None:
        if not self.url:
            raise ValueError("search result without url")


@dataclass(frozen=True)
class ScrapedImage:
    url: str
    alt: str = ""
    title: str = ""
    content_type: str | None = None
    file_size_bytes: int | None = None
    context_before: str = ""
    context_after: str = ""


@dataclass(frozen=True)
class ScrapedPage:
    url: str
    markdown: str
    images: tuple[ScrapedImage, ...] = field(default_factory=tuple)
    title: str = ""

    def __post_init__(self) -> None:
        if len(self.markdown) > PAGE_CHAR_LIMIT:
            object.__setattr__(self, "markdown", self.markdown[:PAGE_CHAR_LIMIT])

    def to_dict(self) -> dict:
        return {
            "url": self.url,
            "title": self.title,
            "markdown": self.markdown,
            "images": [img.__dict__ for img in self.images],
        }

    @classmethod
    def from_dict(cls, raw: dict) -> ScrapedPage:
        return cls(
            url=raw["url"],
            markdown=raw["markdown"],
            title=raw.get("title", ""),
            images=tuple(ScrapedImage(**img) for img in raw.get("images", ())),
        )


class Gateway(Protocol):
    """The four external capabilities every stage talks to."""

    def chat(self, request: ChatRequest) -> str: ...

    def search(self, query: str, top_k: int) -> list[SearchResult]: ...

    def fetch_page(self, url: str) -> ScrapedPage: ...
