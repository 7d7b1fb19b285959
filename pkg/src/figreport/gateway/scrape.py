"""Static HTML to Markdown conversion that keeps track of every ``<img>``."""

from __future__ import annotations

import re
from typing import Callable, Optional
from urllib.parse import urljoin

from bs4 import BeautifulSoup
from markdownify import markdownify

from .base import PAGE_CHAR_LIMIT, ScrapedImage, ScrapedPage

# (url) -> (content_type, file_size_bytes); either may be None
ImageProbe = Callable[[str], "tuple[Optional[str], Optional[int]]"]

_TOKEN = "FIGREPORTIMGTOKEN{}X"
_TOKEN_RE = re.compile(r"FIGREPORTIMGTOKEN(\d+)X")
_DROP_TAGS = ("script", "style", "noscript", "template", "iframe", "svg", "canvas")


def _squash(text: str) -> str:
    return re.sub(r"\s+", " ", text).strip()


def _img_src(tag) -> str:
    for attr in ("src", "data-src", "data-original", "data-lazy-src"):
        value = tag.get(attr)
        if value:
            return value.strip()
    return ""


def html_to_page(
    url: str,
    html: str,
    *,
    window: int = 140,
    max_chars: int = PAGE_CHAR_LIMIT,
    probe: ImageProbe | None = None,
) -> ScrapedPage:
    """Convert ``html`` to Markdown and collect raw image metadata.

    Each image gets up to ``window`` characters of page text on either side.
    Scripts and styles are dropped; headings, links, lists and tables survive.
    The Markdown is truncated to ``max_chars``; image metadata covers the
    whole page.
    """
    soup = BeautifulSoup(html, "html.parser")
    for tag in soup(_DROP_TAGS):
        tag.decompose()
    title = _squash(soup.title.get_text()) if soup.title else ""

    raw_images: list[dict] = []
    for tag in soup.find_all("img"):
        src = _img_src(tag)
        if not src:
            tag.decompose()
            continue
        if src.startswith("data:"):
            # keep the marker, not the payload
            src = src.split(",", 1)[0]
        else:
            src = urljoin(url, src)
        raw_images.append(
            {
                "url": src,
                "alt": _squash(tag.get("alt", "")),
                "title": _squash(tag.get("title", "")),
            }
        )
        tag.replace_with(_TOKEN.format(len(raw_images) - 1))

    body = soup.body or soup
    markdown = markdownify(str(body), heading_style="ATX", bullets="-", strip=["img"])
    markdown = re.sub(r"\n{3,}", "\n\n", markdown).strip()

    images: list[ScrapedImage] = []
    for m in _TOKEN_RE.finditer(markdown):
        idx = int(m.group(1))
        meta = raw_images[idx]
        before = _squash(_TOKEN_RE.sub(" ", markdown[max(0, m.start() - 4 * window) : m.start()]))[-window:]
        after = _squash(_TOKEN_RE.sub(" ", markdown[m.end() : m.end() + 4 * window]))[:window]
        content_type, size = probe(meta["url"]) if probe and not meta["url"].startswith("data:") else (None, None)
        images.append(
            ScrapedImage(
                url=meta["url"],
                alt=meta["alt"],
                title=meta["title"],
                content_type=content_type,
                file_size_bytes=size,
                context_before=before.strip(),
                context_after=after.strip(),
            )
        )

    def _image_md(m: re.Match) -> str:
        meta = raw_images[int(m.group(1))]
        alt = meta["alt"].replace("[", "(").replace("]", ")")
        return f"![{alt}]({meta['url']})"

    markdown = _TOKEN_RE.sub(_image_md, markdown)
    return ScrapedPage(url=url, markdown=markdown[:max_chars], images=tuple(images), title=title)
