"""Iterative web research: queries, retrieval, image pre-filtering, learning
extraction and the evolving outline."""

from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import count
from pathlib import Path
from typing import Callable, NamedTuple, Sequence
from urllib.parse import urlsplit

from .evidence import (
    PLACEHOLDER_RE,
    AdaptiveOutline,
    EvidenceAtom,
    EvidencePool,
    ImageCandidate,
    Learning,
    OutlineParseError,
    dedup_key,
    extract_image_placeholders,
    filter_citations,
    parse_outline,
    render_outline,
    render_outline_budgeted,
)
from .gateway import FetchError, GatewayError, ScrapedImage, ScrapedPage, Template, build_prompt
from .llmtext import extract_tag, parse_json_block

logger = logging.getLogger(__name__)


class EmptyEvidencePool(RuntimeError):
    pass


@dataclass(frozen=True)
class Blocklists:
    filenames: tuple[str, ...] = (
        "logo",
        "icon",
        "avatar",
        "sprite",
        "badge",
        "banner-ad",
        "favicon",
        "spinner",
        "tracking",
        "pixel.",
    )
    alt: tuple[str, ...] = ("avatar", "profile picture", "advertisement", "sponsored", "share on", "follow us")
    domains: tuple[str, ...] = (
        "doubleclick.net",
        "googlesyndication.com",
        "googleadservices.com",
        "adnxs.com",
        "scorecardresearch.com",
        "gravatar.com",
        "fbcdn.net",
        "twimg.com",
        "licdn.com",
    )


@dataclass(frozen=True)
class ResearchConfig:
    rounds: int = 5
    queries_per_round: int = 10
    pages_per_query: int = 3
    learnings_per_page: int = 3
    per_page_image_cap: int = 15
    context_window: int = 140
    min_image_bytes: int = 30 * 1024
    excluded_formats: frozenset[str] = frozenset({".svg", ".gif", "data:image"})
    blocklists: Blocklists = field(default_factory=Blocklists)
    follow_up_questions: int = 2
    max_workers: int = 8
    learnings_prompt_chars: int = 45_000
    outline_prompt_chars: int = 20_000

    def __post_init__(self) -> None:
        for name in (
            "rounds",
            "queries_per_round",
            "pages_per_query",
            "learnings_per_page",
            "per_page_image_cap",
            "context_window",
            "min_image_bytes",
        ):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass
class RoundState:
    round: int
    issued_queries: list[str]
    new_learnings: list[Learning]
    outline: AdaptiveOutline | None
    urls: list[str] = field(default_factory=list)
    failed_urls: list[str] = field(default_factory=list)
    follow_up_questions: list[str] = field(default_factory=list)
    round_queries: list[str] = field(default_factory=list)
    new_images: int = 0

    def summary(self) -> dict:
        return {
            "round": self.round,
            "queries": self.round_queries,
            "urls": self.urls,
            "failed_urls": self.failed_urls,
            "follow_up_questions": self.follow_up_questions,
            "counts": {
                "queries": len(self.round_queries),
                "pages_fetched": len(self.urls),
                "pages_failed": len(self.failed_urls),
                "learnings": len(self.new_learnings),
                "new_images": self.new_images,
                "outline_sections": len(self.outline.nodes) if self.outline else 0,
            },
        }


@dataclass
class ResearchResult:
    pool: EvidencePool
    outline: AdaptiveOutline
    rounds: list[RoundState]


class PrefilterDecision(NamedTuple):
    keep: bool
    reason: str


# ---------------------------------------------------------------------------
# Prompt payload helpers
# ---------------------------------------------------------------------------


def learnings_text(learnings: Sequence[Learning], limit: int | None = None) -> str:
    lines: list[str] = []
    used = 0
    for learning in learnings:
        line = learning.prompt_line()
        if limit is not None and used + len(line) + 1 > limit:
            break
        lines.append(line)
        used += len(line) + 1
    return "\n".join(lines)


_QUERY_PREFIX_RE = re.compile(r"^\s*(?:\d+[.)]|[-*•])\s*")


def _clean_query(line: str) -> str:
    line = _QUERY_PREFIX_RE.sub("", line).strip()
    if len(line) >= 2 and line[0] == line[-1] and line[0] in "\"'":
        line = line[1:-1].strip()
    return line


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def generate_queries(
    topic: str,
    learnings: Sequence[Learning],
    outline: AdaptiveOutline | None,
    prev_queries: Sequence[str],
    n: int,
    gateway,
    cfg: ResearchConfig | None = None,
) -> list[str]:
    if n < 1:
        raise ValueError("n must be >= 1")
    cfg = cfg or ResearchConfig()
    learning_str = learnings_text(learnings, cfg.learnings_prompt_chars)
    if outline:
        request = build_prompt(
            Template.OUTLINE_QUERY,
            {
                "queries_num": n,
                "topic": topic,
                "current_outline": render_outline_budgeted(outline, cfg.outline_prompt_chars),
                "previous_queries": "\n".join(prev_queries) or "none",
                "learning_str": learning_str,
            },
        )
    else:
        request = build_prompt(
            Template.INITIAL_QUERY, {"queries_num": n, "query": topic, "learning_str": learning_str}
        )
    try:
        output = gateway.chat(request)
    except GatewayError as exc:
        logger.warning("query generation failed: %s", exc)
        return []
    seen = set(prev_queries)
    queries: list[str] = []
    for line in output.splitlines():
        query = _clean_query(line)
        if not query or query in seen:
            continue
        seen.add(query)
        queries.append(query)
        if len(queries) == n:
            break
    return queries


def _format_matches(url: str, content_type: str | None, fmt: str) -> bool:
    if fmt.startswith("."):
        if urlsplit(url).path.lower().endswith(fmt):
            return True
        mime = {".svg": "image/svg+xml", ".gif": "image/gif"}.get(fmt)
        return bool(mime and content_type and content_type.lower().startswith(mime))
    return url.lower().startswith(fmt)


def prefilter_image(meta: ScrapedImage, cfg: ResearchConfig) -> PrefilterDecision:
    """Metadata-only extraction-time filter. Unknown size is never a drop reason."""
    url = meta.url.strip()
    for fmt in sorted(cfg.excluded_formats):
        if _format_matches(url, meta.content_type, fmt):
            return PrefilterDecision(False, f"excluded format {fmt}")
    if meta.content_type and not meta.content_type.lower().startswith("image/"):
        return PrefilterDecision(False, f"content type {meta.content_type} is not an image")
    if meta.file_size_bytes is not None and meta.file_size_bytes < cfg.min_image_bytes:
        return PrefilterDecision(False, f"min size {cfg.min_image_bytes // 1024}KB")
    parts = urlsplit(url)
    filename = parts.path.rsplit("/", 1)[-1].lower()
    for needle in cfg.blocklists.filenames:
        if needle in filename:
            return PrefilterDecision(False, f"filename blocklist: {needle}")
    alt = meta.alt.lower()
    for needle in cfg.blocklists.alt:
        if needle in alt:
            return PrefilterDecision(False, f"alt blocklist: {needle}")
    host = (parts.hostname or "").lower()
    for domain in cfg.blocklists.domains:
        if host == domain or host.endswith("." + domain):
            return PrefilterDecision(False, f"domain blocklist: {domain}")
    return PrefilterDecision(True, "passed")


class ImageIdAllocator:
    """Hands out global ``Image_N`` IDs, reusing the ID of a known dedup key."""

    def __init__(self, start: int = 1):
        self._counter = count(start)
        self._by_key: dict[str, str] = {}

    def __call__(self, url: str) -> tuple[str, bool]:
        key = dedup_key(url)
        if key in self._by_key:
            return self._by_key[key], False
        image_id = f"Image_{next(self._counter)}"
        self._by_key[key] = image_id
        return image_id, True


def collect_page_images(
    page: ScrapedPage, cfg: ResearchConfig, allocate: ImageIdAllocator | None = None
) -> list[ImageCandidate]:
    """Pre-filter a page's images and keep the first ``per_page_image_cap`` survivors."""
    allocate = allocate or ImageIdAllocator()
    out: list[ImageCandidate] = []
    seen: set[str] = set()
    w = cfg.context_window
    for meta in page.images:
        if len(out) == cfg.per_page_image_cap:
            break
        decision = prefilter_image(meta, cfg)
        if not decision.keep:
            logger.debug("prefilter drop %s: %s", meta.url, decision.reason)
            continue
        key = dedup_key(meta.url)
        if key in seen:
            continue
        seen.add(key)
        image_id, _ = allocate(meta.url)
        before, after = meta.context_before[-w:].strip(), meta.context_after[:w].strip()
        context = f"{before} {after}".strip()[: 2 * w]
        out.append(
            ImageCandidate(
                id=image_id,
                url=meta.url,
                page_url=page.url,
                alt_text=meta.alt or meta.title,
                surrounding_text=context,
                file_size_bytes=meta.file_size_bytes,
                content_type=meta.content_type,
                dedup_key=key,
            )
        )
    return out


_MD_IMAGE_RE = re.compile(r"!\[([^\]\n]*)\]\(([^)\s]+)(?:\s+\"[^\"]*\")?\)")


def inject_placeholders(markdown: str, candidates: Sequence[ImageCandidate]) -> str:
    """Swap Markdown images for ``[Image_X: alt]``; images that were filtered out vanish."""
    by_key = {c.dedup_key: c for c in candidates}

    def swap(m: re.Match) -> str:
        cand = by_key.get(dedup_key(m.group(2)))
        if cand is None:
            return ""
        desc = (m.group(1) or cand.alt_text or "image").replace("]", ")")
        return f"[{cand.id}: {desc}]"

    return _MD_IMAGE_RE.sub(swap, markdown)


def strip_unknown_placeholders(text: str, known: set[str]) -> str:
    cleaned = PLACEHOLDER_RE.sub(lambda m: m.group(0) if m.group(1) in known else "", text)
    return re.sub(r"[ \t]{2,}", " ", cleaned).strip()


_ATOM_TEXT_RE = re.compile(
    r"visual features?:\s*(?P<v>.+?)\s*(?:\n|;|\|)\s*deductive fact:\s*(?P<d>.+?)\s*(?:\n|;|\|)\s*rationale:\s*(?P<r>.+)",
    re.IGNORECASE | re.DOTALL,
)


def _parse_atom(raw, known: set[str]) -> EvidenceAtom | None:
    if isinstance(raw, dict):
        parts = (
            str(raw.get("visual_features") or raw.get("Visual Features") or "").strip(),
            str(raw.get("deductive_fact") or raw.get("Deductive Fact") or "").strip(),
            str(raw.get("rationale") or raw.get("Rationale") or "").strip(),
        )
        image_id = raw.get("image_id")
    elif isinstance(raw, str):
        m = _ATOM_TEXT_RE.search(raw)
        if m is None:
            return None
        parts = (m.group("v").strip(), m.group("d").strip(), m.group("r").strip())
        found = PLACEHOLDER_RE.search(raw)
        image_id = found.group(1) if found else None
    else:
        return None
    if not all(parts):
        return None
    if image_id is not None and image_id not in known:
        return None
    return EvidenceAtom(*parts, image_id=image_id)


@dataclass
class _Draft:
    text: str
    atoms: list[EvidenceAtom]


def _draft_learnings(
    page: ScrapedPage, query: str, candidates: Sequence[ImageCandidate], cfg: ResearchConfig, gateway
) -> tuple[list[_Draft], list[str]]:
    if not page.markdown.strip():
        return [], []
    request = build_prompt(
        Template.LEARNING_EXTRACTION,
        {
            "query": query,
            "learning_num": cfg.learnings_per_page,
            "question_num": cfg.follow_up_questions,
            "contents": inject_placeholders(page.markdown, candidates),
        },
    )
    try:
        payload = parse_json_block(gateway.chat(request), dict)
        raw_learnings = payload.get("learnings") or []
        if not isinstance(raw_learnings, list):
            raise ValueError("learnings is not a list")
    except (GatewayError, ValueError) as exc:
        logger.warning("learning extraction failed for %s: %s", page.url, exc)
        return [], []

    known = {c.id for c in candidates}
    drafts: list[_Draft] = []
    for raw in raw_learnings[: cfg.learnings_per_page]:
        text = raw.get("text", "") if isinstance(raw, dict) else str(raw)
        text = strip_unknown_placeholders(str(text), known)
        if not text:
            continue
        raw_atoms = raw.get("evidence_atoms") or raw.get("deductive_evidence_atoms") or [] if isinstance(raw, dict) else []
        if isinstance(raw_atoms, (dict, str)):
            raw_atoms = [raw_atoms]
        atoms = [a for a in (_parse_atom(r, known) for r in raw_atoms) if a is not None]
        drafts.append(_Draft(text, atoms))
    questions = [str(q).strip() for q in payload.get("follow_up_questions") or [] if str(q).strip()]
    return drafts, questions[: cfg.follow_up_questions]


def _finalize(drafts: Sequence[_Draft], page: ScrapedPage, round_num: int, next_id: Callable[[], int]) -> list[Learning]:
    out = []
    for draft in drafts:
        refs = tuple(dict.fromkeys(pid for pid, _ in extract_image_placeholders(draft.text)))
        out.append(
            Learning(
                id=next_id(),
                text=draft.text,
                source_url=page.url,
                image_refs=refs,
                evidence_atoms=tuple(draft.atoms),
                round=round_num,
            )
        )
    return out


def extract_learnings(
    page: ScrapedPage,
    query: str,
    candidates: Sequence[ImageCandidate],
    cfg: ResearchConfig,
    gateway,
    next_id: Callable[[], int] | None = None,
    round_num: int = 1,
) -> tuple[list[Learning], list[str]]:
    """Distill one page into at most ``learnings_per_page`` learnings.

    Placeholders naming images that are not among ``candidates`` are
    stripped from the learning text.
    """
    next_id = next_id or count(1).__next__
    drafts, questions = _draft_learnings(page, query, candidates, cfg, gateway)
    return _finalize(drafts, page, round_num, next_id), questions


def update_outline(
    topic: str,
    current: AdaptiveOutline | None,
    new_learnings: Sequence[Learning],
    all_learnings: Sequence[Learning],
    gateway,
    round_num: int = 1,
    cfg: ResearchConfig | None = None,
) -> AdaptiveOutline | None:
    """Ask the planner for a revised outline; keep ``current`` if the answer is unusable."""
    if not all_learnings:
        raise ValueError("the outline is only initialized once evidence exists")
    cfg = cfg or ResearchConfig()
    request = build_prompt(
        Template.OUTLINE_UPDATE,
        {
            "topic": topic,
            "current_outline": render_outline_budgeted(current, cfg.outline_prompt_chars) if current else "(none yet)",
            "round_num": round_num,
            "new_learnings_str": learnings_text(new_learnings, cfg.learnings_prompt_chars),
            "all_learnings_str": learnings_text(all_learnings, cfg.learnings_prompt_chars),
        },
    )
    try:
        body = extract_tag(gateway.chat(request), "adaptive_outline")
    except GatewayError as exc:
        logger.warning("outline update failed: %s", exc)
        return current
    if body is None:
        logger.warning("outline update: missing <adaptive_outline> block, keeping previous outline")
        return current
    try:
        outline = parse_outline(body)
    except OutlineParseError as exc:
        logger.warning("outline update: %s, keeping previous outline", exc)
        return current
    if not outline:
        logger.warning("outline update: empty outline, keeping previous outline")
        return current
    outline, removed = filter_citations(outline, (l.id for l in all_learnings))
    if removed:
        logger.warning("outline update: removed unknown citation ids %s", sorted(set(removed)))
    return outline


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, ensure_ascii=False, sort_keys=True) + "\n", encoding="utf-8")


def run_research(topic: str, cfg: ResearchConfig, gateway, run_dir: str | Path | None = None) -> ResearchResult:
    """Run ``cfg.rounds`` rounds of search, extraction and outline maintenance."""
    run_dir = Path(run_dir) if run_dir else None
    pool = EvidencePool()
    outline: AdaptiveOutline | None = None
    issued: list[str] = []
    fetched: set[str] = set()
    allocate = ImageIdAllocator()
    next_learning_id = count(1).__next__
    rounds: list[RoundState] = []
    latest: list[Learning] = []

    with ThreadPoolExecutor(max_workers=cfg.max_workers) as executor:
        for round_num in range(1, cfg.rounds + 1):
            queries = generate_queries(topic, latest, outline, issued, cfg.queries_per_round, gateway, cfg)
            issued.extend(queries)
            state = RoundState(round_num, list(issued), [], outline, round_queries=queries)

            targets: list[tuple[str, str]] = []
            for query in queries:
                for result in gateway.search(query, cfg.pages_per_query)[: cfg.pages_per_query]:
                    if result.url in fetched:
                        continue
                    fetched.add(result.url)
                    targets.append((query, result.url))

            def fetch(url: str) -> ScrapedPage | None:
                try:
                    return gateway.fetch_page(url)
                except (FetchError, GatewayError) as exc:
                    logger.warning("skipping %s: %s", url, exc)
                    return None

            pages = list(executor.map(fetch, [url for _, url in targets]))

            jobs = []
            for (query, url), page in zip(targets, pages):
                if page is None:
                    state.failed_urls.append(url)
                    continue
                state.urls.append(url)
                candidates = collect_page_images(page, cfg, allocate)
                for cand in candidates:
                    if pool.add_image(cand):
                        state.new_images += 1
                jobs.append((query, page, candidates))

            drafted = list(executor.map(lambda job: _draft_learnings(job[1], job[0], job[2], cfg, gateway), jobs))
            for (query, page, _), (drafts, questions) in zip(jobs, drafted):
                for learning in _finalize(drafts, page, round_num, next_learning_id):
                    pool.add_learning(learning)
                    state.new_learnings.append(learning)
                state.follow_up_questions.extend(questions)

            if state.new_learnings:
                outline = update_outline(
                    topic, outline, state.new_learnings, pool.learnings, gateway, round_num, cfg
                )
                latest = state.new_learnings
            else:
                logger.warning("round %d produced no learnings", round_num)
            state.outline = outline
            rounds.append(state)
            if run_dir:
                _write_json(run_dir / "rounds" / f"round_{round_num}.json", state.summary())

    if not pool:
        raise EmptyEvidencePool("empty evidence pool")
    outline = outline or AdaptiveOutline()
    if run_dir:
        (run_dir / "learnings.json").write_text(pool.to_json(), encoding="utf-8")
        (run_dir / "outline.md").write_text(render_outline(outline, "internal"), encoding="utf-8")
    return ResearchResult(pool, outline, rounds)
