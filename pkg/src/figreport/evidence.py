"""Shared evidence types plus the outline, placeholder and citation parsers.

Every stage of the pipeline passes these objects around, so they are frozen
dataclasses; stages produce updated copies with ``dataclasses.replace``.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Iterable, Iterator
from urllib.parse import parse_qsl, urlencode, urlsplit, urlunsplit

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

FIGURE_TYPES = (
    "architecture",
    "pipeline",
    "hardware",
    "schematic",
    "result_chart",
    "benchmark",
    "ablation_table",
    "photo",
    "map",
    "other",
)

UNASSIGNED = "unassigned"


class OutlineParseError(ValueError):
    """Raised when outline headings are not strictly hierarchical."""

    def __init__(self, line_no: int, line: str, problem: str):
        super().__init__(f"line {line_no}: {problem}: {line!r}")
        self.line_no = line_no
        self.line = line


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EvidenceAtom:
    """One (visible feature, deductive fact, rationale) triple."""

    visual_features: str
    deductive_fact: str
    rationale: str
    image_id: str | None = None

    def __post_init__(self) -> None:
        if not (self.visual_features.strip() and self.deductive_fact.strip() and self.rationale.strip()):
            raise ValueError("evidence atom fields must be nonempty")

    def render(self) -> str:
        return f"[{self.visual_features}] -> [{self.deductive_fact}] -> [{self.rationale}]"


@dataclass(frozen=True)
class Learning:
    id: int
    text: str
    source_url: str
    image_refs: tuple[str, ...] = ()
    evidence_atoms: tuple[EvidenceAtom, ...] = ()
    round: int = 1

    def __post_init__(self) -> None:
        missing = {pid for pid, _ in extract_image_placeholders(self.text)} - set(self.image_refs)
        if missing:
            raise ValueError(f"learning {self.id} has placeholders without image_refs: {sorted(missing)}")

    def prompt_line(self) -> str:
        """The form used when learnings are injected into prompts."""
        source = f" (source: {self.source_url})" if self.source_url else ""
        return f"[Learning id {self.id}] {self.text}{source}"


@dataclass(frozen=True)
class OcrResult:
    visible_title: str = ""
    visible_text: str = ""
    keywords: tuple[str, ...] = ()
    summary: str = ""

    def __post_init__(self) -> None:
        seen: dict[str, None] = {}
        for kw in self.keywords:
            kw = kw.strip().lower()
            if kw:
                seen.setdefault(kw, None)
        object.__setattr__(self, "keywords", tuple(seen))


@dataclass(frozen=True)
class ImageCandidate:
    id: str
    url: str
    page_url: str = ""
    alt_text: str = ""
    surrounding_text: str = ""
    file_size_bytes: int | None = None
    content_type: str | None = None
    figure_type: str | None = None
    credibility: float = 0.0
    relevance: float | None = None
    recommended_section: str | None = None
    evidence_role: str = ""
    ocr: OcrResult | None = None
    atoms: tuple[EvidenceAtom, ...] = ()
    composite_score: float | None = None
    keep_decision: bool | None = None
    dedup_key: str = ""

    def __post_init__(self) -> None:
        if not self.dedup_key:
            object.__setattr__(self, "dedup_key", dedup_key(self.url))
        if not 0.0 <= self.credibility <= 5.0:
            raise ValueError(f"{self.id}: credibility {self.credibility} outside [0, 5]")
        if self.relevance is not None and not 0.0 <= self.relevance <= 5.0:
            raise ValueError(f"{self.id}: relevance {self.relevance} outside [0, 5]")
        if self.figure_type is not None and self.figure_type not in FIGURE_TYPES:
            object.__setattr__(self, "figure_type", "other")

    @property
    def analyzed(self) -> bool:
        return self.ocr is not None


@dataclass(frozen=True)
class OutlineBullet:
    text: str
    citations: tuple[int, ...] = ()
    is_gap: bool = False

    def __post_init__(self) -> None:
        if self.is_gap and self.citations:
            raise ValueError("gap bullets cannot carry citations")


@dataclass(frozen=True)
class OutlineNode:
    number: str
    title: str
    bullets: tuple[OutlineBullet, ...] = ()
    children: tuple[OutlineNode, ...] = ()

    @property
    def depth(self) -> int:
        return self.number.count(".") + 1

    def walk(self) -> Iterator[OutlineNode]:
        yield self
        for child in self.children:
            yield from child.walk()

    def citation_ids(self) -> list[int]:
        """Citation IDs over the whole branch, first-occurrence order."""
        seen: dict[int, None] = {}
        for node in self.walk():
            for bullet in node.bullets:
                for cid in bullet.citations:
                    seen.setdefault(cid, None)
        return list(seen)

    def gap_texts(self) -> list[str]:
        return [b.text for node in self.walk() for b in node.bullets if b.is_gap]


@dataclass(frozen=True)
class AdaptiveOutline:
    nodes: tuple[OutlineNode, ...] = ()

    def __bool__(self) -> bool:
        return bool(self.nodes)

    def walk(self) -> Iterator[OutlineNode]:
        for node in self.nodes:
            yield from node.walk()

    def citation_ids(self) -> list[int]:
        seen: dict[int, None] = {}
        for node in self.nodes:
            for cid in node.citation_ids():
                seen.setdefault(cid, None)
        return list(seen)

    def top_titles(self) -> list[str]:
        return [n.title for n in self.nodes]

    def map_bullets(self, fn) -> AdaptiveOutline:
        """Return a copy with ``fn`` applied to every bullet."""

        def rebuild(node: OutlineNode) -> OutlineNode:
            return replace(
                node,
                bullets=tuple(fn(b) for b in node.bullets),
                children=tuple(rebuild(c) for c in node.children),
            )

        return AdaptiveOutline(tuple(rebuild(n) for n in self.nodes))


@dataclass
class EvidencePool:
    """Learnings plus deduplicated image candidates.

    Mutated only by the research loop (single writer).
    """

    learnings: list[Learning] = field(default_factory=list)
    images: list[ImageCandidate] = field(default_factory=list)

    def add_learning(self, learning: Learning) -> None:
        if any(existing.id == learning.id for existing in self.learnings):
            raise ValueError(f"duplicate learning id {learning.id}")
        self.learnings.append(learning)

    def add_image(self, image: ImageCandidate) -> bool:
        if any(existing.dedup_key == image.dedup_key for existing in self.images):
            return False
        self.images.append(image)
        return True

    def learning_ids(self) -> set[int]:
        return {l.id for l in self.learnings}

    def learning(self, lid: int) -> Learning:
        for l in self.learnings:
            if l.id == lid:
                return l
        raise KeyError(lid)

    def image_map(self) -> dict[str, ImageCandidate]:
        return {img.id: img for img in self.images}

    def __bool__(self) -> bool:
        return bool(self.learnings)

    # -- serialization (learnings.json) --------------------------------------

    def to_json(self) -> str:
        payload = {
            "schema": SCHEMA_VERSION,
            "learnings": [asdict(l) for l in self.learnings],
            "images": [asdict(i) for i in self.images],
        }
        return json.dumps(payload, indent=2, ensure_ascii=False, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> EvidencePool:
        payload = json.loads(text)
        if payload.get("schema") != SCHEMA_VERSION:
            raise ValueError(f"unsupported learnings schema: {payload.get('schema')!r}")
        pool = cls()
        for raw in payload["learnings"]:
            pool.add_learning(learning_from_dict(raw))
        for raw in payload["images"]:
            pool.add_image(image_from_dict(raw))
        return pool


def _atom_from_dict(raw: dict[str, Any]) -> EvidenceAtom:
    return EvidenceAtom(
        visual_features=raw["visual_features"],
        deductive_fact=raw["deductive_fact"],
        rationale=raw["rationale"],
        image_id=raw.get("image_id"),
    )


def learning_from_dict(raw: dict[str, Any]) -> Learning:
    return Learning(
        id=int(raw["id"]),
        text=raw["text"],
        source_url=raw.get("source_url", ""),
        image_refs=tuple(raw.get("image_refs", ())),
        evidence_atoms=tuple(_atom_from_dict(a) for a in raw.get("evidence_atoms", ())),
        round=int(raw.get("round", 1)),
    )


def image_from_dict(raw: dict[str, Any]) -> ImageCandidate:
    raw = dict(raw)
    ocr = raw.pop("ocr", None)
    atoms = raw.pop("atoms", ())
    return ImageCandidate(
        **raw,
        ocr=OcrResult(**{**ocr, "keywords": tuple(ocr.get("keywords", ()))}) if ocr else None,
        atoms=tuple(_atom_from_dict(a) for a in atoms),
    )


# ---------------------------------------------------------------------------
# URL normalization
# ---------------------------------------------------------------------------

_TRACKING_PARAMS = {"fbclid"}


def dedup_key(url: str) -> str:
    """Normalize an image URL so trivially different links collapse together.

    Lowercases scheme and host, drops the fragment and ``utm_*``/``fbclid``
    query parameters; path and remaining query are kept verbatim.
    """
    url = url.strip()
    if url.startswith("data:"):
        return url
    parts = urlsplit(url)
    query = [
        (k, v)
        for k, v in parse_qsl(parts.query, keep_blank_values=True)
        if not k.lower().startswith("utm_") and k.lower() not in _TRACKING_PARAMS
    ]
    return urlunsplit((parts.scheme.lower(), parts.netloc.lower(), parts.path, urlencode(query), ""))


# ---------------------------------------------------------------------------
# Image placeholders
# ---------------------------------------------------------------------------

PLACEHOLDER_RE = re.compile(r"\[(Image_\d+)(?::\s*([^\[\]\n]*?))?\s*\]")


def extract_image_placeholders(text: str) -> list[tuple[str, str]]:
    """All ``[Image_X: description]`` / ``[Image_X]`` occurrences, in order."""
    return [(m.group(1), (m.group(2) or "").strip()) for m in PLACEHOLDER_RE.finditer(text)]


def image_sort_key(image_id: str) -> tuple[int, str]:
    """Numeric order for ``Image_N`` identifiers (Image_9 < Image_10)."""
    m = re.search(r"(\d+)$", image_id)
    return (int(m.group(1)) if m else -1, image_id)


# ---------------------------------------------------------------------------
# Outline parsing / rendering
# ---------------------------------------------------------------------------

_HEADING_RE = re.compile(r"^(#{1,6})\s+(\d+(?:\.\d+)*)\.?(?:\s+(.*?))?\s*$")
_ANY_HEADING_RE = re.compile(r"^#{1,6}\s")
_BULLET_RE = re.compile(r"^\s*(?:[a-z]{1,2}[.)]|[-*+])\s+(.*?)\s*$")
_GAP_RE = re.compile(r"^\s*(?:[a-z]{1,2}[.)]\s+|[-*+]\s+)?Gap:\s*(.*?)\s*$", re.IGNORECASE)
_CITATION_RE = re.compile(r"<citation>(.*?)</citation>", re.IGNORECASE | re.DOTALL)
_CITATION_TOKEN_RE = re.compile(r"^(?:id\s*)?(\d+)$", re.IGNORECASE)


def parse_citation_tag(body: str) -> list[int]:
    """Parse ``id 3, id 7`` into ``[3, 7]``; junk tokens are skipped with a warning."""
    ids: list[int] = []
    for token in body.split(","):
        token = token.strip()
        if not token:
            continue
        m = _CITATION_TOKEN_RE.match(token)
        if m is None:
            logger.warning("ignoring non-numeric citation token %r", token)
            continue
        ids.append(int(m.group(1)))
    return ids


def split_citations(text: str) -> tuple[str, tuple[int, ...]]:
    """Strip citation tags from bullet text, returning (text, ids)."""
    seen: dict[int, None] = {}
    for m in _CITATION_RE.finditer(text):
        for cid in parse_citation_tag(m.group(1)):
            seen.setdefault(cid, None)
    clean = re.sub(r"\s+", " ", _CITATION_RE.sub(" ", text)).strip()
    return clean, tuple(seen)


@dataclass
class _Builder:
    number: str
    title: str
    bullets: list[OutlineBullet] = field(default_factory=list)
    children: list[_Builder] = field(default_factory=list)

    def freeze(self) -> OutlineNode:
        return OutlineNode(self.number, self.title, tuple(self.bullets), tuple(c.freeze() for c in self.children))


def parse_outline(markdown: str) -> AdaptiveOutline:
    """Parse the numbered Markdown outline format used throughout the pipeline.

    Headings look like ``# 1. Title`` / ``## 1.1 Title``; bullets are
    ``a. text <citation>id 1, id 3</citation>``; lines starting with ``Gap:``
    become gap bullets. Heading numbers must nest under their parent and be
    unique, otherwise :class:`OutlineParseError` names the offending line.
    """
    roots: list[_Builder] = []
    stack: list[_Builder] = []
    seen_numbers: set[str] = set()

    for line_no, raw in enumerate(markdown.splitlines(), start=1):
        line = raw.rstrip()
        if not line.strip():
            continue
        heading = _HEADING_RE.match(line)
        if heading:
            hashes, number, title = heading.groups()
            depth = len(hashes)
            parts = number.split(".")
            if len(parts) != depth:
                raise OutlineParseError(line_no, line, f"heading level {depth} does not match number {number}")
            if number in seen_numbers:
                raise OutlineParseError(line_no, line, f"duplicate section number {number}")
            parent_number = ".".join(parts[:-1])
            while stack and stack[-1].number.count(".") + 1 >= depth:
                stack.pop()
            if depth > 1 and (not stack or stack[-1].number != parent_number):
                raise OutlineParseError(line_no, line, f"section {number} has no parent {parent_number}")
            node = _Builder(number, (title or "").strip())
            (stack[-1].children if stack else roots).append(node)
            stack.append(node)
            seen_numbers.add(number)
            continue
        if _ANY_HEADING_RE.match(line):
            raise OutlineParseError(line_no, line, "heading without section number")
        gap = _GAP_RE.match(line)
        bullet = None if gap else _BULLET_RE.match(line)
        if not (gap or bullet):
            logger.debug("outline: skipping free text line %d", line_no)
            continue
        if not stack:
            raise OutlineParseError(line_no, line, "bullet before first heading")
        if gap:
            text, cites = split_citations(gap.group(1))
            if cites:
                logger.warning("outline line %d: dropping citations on a Gap entry", line_no)
            stack[-1].bullets.append(OutlineBullet(text, (), True))
        else:
            text, cites = split_citations(bullet.group(1))
            stack[-1].bullets.append(OutlineBullet(text, cites, False))

    return AdaptiveOutline(tuple(r.freeze() for r in roots))


def _bullet_label(index: int) -> str:
    letters = ""
    index += 1
    while index:
        index, rem = divmod(index - 1, 26)
        letters = chr(ord("a") + rem) + letters
    return letters


def _heading_line(node: OutlineNode) -> str:
    hashes = "#" * node.depth
    number = f"{node.number}." if node.depth == 1 else node.number
    return f"{hashes} {number} {node.title}".rstrip()


def _render_node(node: OutlineNode, mode: str, out: list[str], headings_only: bool = False) -> None:
    out.append(_heading_line(node))
    if not headings_only:
        label = 0
        for bullet in node.bullets:
            if bullet.is_gap:
                if mode == "internal":
                    out.append(f"Gap: {bullet.text}".rstrip())
                continue
            line = f"{_bullet_label(label)}. {bullet.text}"
            if mode == "internal" and bullet.citations:
                ids = ", ".join(f"id {c}" for c in bullet.citations)
                line += f" <citation>{ids}</citation>"
            out.append(line)
            label += 1
    for child in node.children:
        _render_node(child, mode, out, headings_only)


def render_outline(outline: AdaptiveOutline, mode: str = "internal") -> str:
    """Render an outline. ``internal`` keeps citation tags and Gap lines,
    ``reader`` strips both."""
    if mode not in ("internal", "reader"):
        raise ValueError(f"unknown render mode {mode!r}")
    out: list[str] = []
    for node in outline.nodes:
        _render_node(node, mode, out)
    return "\n".join(out) + ("\n" if out else "")


def render_node(node: OutlineNode, mode: str = "reader") -> str:
    out: list[str] = []
    _render_node(node, mode, out)
    return "\n".join(out)


def render_outline_budgeted(outline: AdaptiveOutline, limit: int) -> str:
    """Internal rendering that fits ``limit`` characters.

    Headings and Gap lines are always kept; ordinary bullets are dropped
    from the end of the document first when space runs out.
    """
    full = render_outline(outline, "internal")
    if len(full) <= limit:
        return full
    structure = [
        line for line in full.splitlines() if _ANY_HEADING_RE.match(line) or line.startswith("Gap:")
    ]
    budget = limit - sum(len(l) + 1 for l in structure)
    keep: set[int] = set()
    for i, line in enumerate(full.splitlines()):
        if _ANY_HEADING_RE.match(line) or line.startswith("Gap:"):
            continue
        if len(line) + 1 > budget:
            break
        budget -= len(line) + 1
        keep.add(i)
    lines = [
        line
        for i, line in enumerate(full.splitlines())
        if i in keep or _ANY_HEADING_RE.match(line) or line.startswith("Gap:")
    ]
    return "\n".join(lines) + "\n"


def filter_citations(outline: AdaptiveOutline, valid_ids: Iterable[int]) -> tuple[AdaptiveOutline, list[int]]:
    """Drop citation IDs not in ``valid_ids``; returns (outline, removed ids)."""
    valid = set(valid_ids)
    removed: list[int] = []

    def fix(bullet: OutlineBullet) -> OutlineBullet:
        bad = [c for c in bullet.citations if c not in valid]
        if not bad:
            return bullet
        removed.extend(bad)
        return replace(bullet, citations=tuple(c for c in bullet.citations if c in valid))

    return outline.map_bullets(fix), removed
