from .base import (
    GENERATION,
    PAGE_CHAR_LIMIT,
    VISUAL,
    AuthError,
    ChatRequest,
    FetchError,
    Gateway,
    GatewayError,
    GatewayTimeout,
    MalformedResponse,
    ScrapedImage,
    ScrapedPage,
    SearchResult,
    TranscriptMiss,
    VisionRejected,
)
from .mock import CachingGateway, MockGateway
from .prompts import PromptError, Template, build_prompt, template_slots
from .scrape import html_to_page

__all__ = [
    "GENERATION",
    "PAGE_CHAR_LIMIT",
    "VISUAL",
    "AuthError",
    "CachingGateway",
    "ChatRequest",
    "FetchError",
    "Gateway",
    "GatewayError",
    "GatewayTimeout",
    "MalformedResponse",
    "MockGateway",
    "PromptError",
    "ScrapedImage",
    "ScrapedPage",
    "SearchResult",
    "Template",
    "TranscriptMiss",
    "VisionRejected",
    "build_prompt",
    "html_to_page",
    "template_slots",
]
