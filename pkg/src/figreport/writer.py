"""Section-by-section report generation with evidence and image routing."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .enrichment import PlanningBrief
from .evidence import PLACEHOLDER_RE, ImageCandidate, Learning, image_sort_key
from .gateway import GatewayError, Template, build_prompt
from .planner import ReportPlan, SectionPlan
from .tokens import STOPWORDS, tokenize as _tokenize

logger = logging.getLogger(__name__)

VIS_BLOCK_RE = re.compile(r"<visualization>(.*?)</visualization>", re.DOTALL | re.IGNORECASE)


@dataclass(frozen=True)
class ScoringParams:
    alpha: float = 2.0
    type_bonus_major: float = 3.0
    type_bonus_minor: float = 2.0
    gamma: float = 1.0
    tau: int = 20
    min_matches: int = 2
    threshold: float = 4.0
    major_types: frozenset[str] = frozenset({"architecture", "pipeline", "hardware", "schematic"})
    minor_types: frozenset[str] = frozenset({"result_chart", "benchmark", "ablation_table"})
    per_section_limit: int = 4
    section_prior: float = 0.5
    stopwords: frozenset[str] = STOPWORDS

    def type_bonus(self, figure_type: str | None) -> float:
        if figure_type in self.major_types:
            return self.type_bonus_major
        if figure_type in self.minor_types:
            return self.type_bonus_minor
        return 0.0


@dataclass(frozen=True)
class UsedFigureRegistry:
    """Dedup keys of source figures already placed in the report. Grows only."""

    used: frozenset[str] = frozenset()

    def __contains__(self, key: object) -> bool:
        return key in self.used

    def with_keys(self, keys) -> UsedFigureRegistry:
        return UsedFigureRegistry(self.used | frozenset(keys))


@dataclass(frozen=True)
class SectionDraft:
    section_index: int
    markdown: str
    used_image_ids: frozenset[str] = frozenset()
    visualization_specs: tuple[str, ...] = ()
    prompt: str = field(default="", compare=False, repr=False)


def tokenize(text: str, params: ScoringParams | None = None) -> set[str]:
    return _tokenize(text, stopwords=(params or ScoringParams()).stopwords)


def image_tokens(v: ImageCandidate, params: ScoringParams | None = None) -> set[str]:
    keywords = " ".join(v.ocr.keywords) if v.ocr else ""
    return tokenize(f"{v.alt_text} {keywords} {v.evidence_role}", params)


def score_image(v: ImageCandidate, s: SectionPlan, p: ScoringParams | None = None) -> float | None:
    """Keyword-overlap routing score, or None when fewer than ``min_matches`` tokens overlap."""
    p = p or ScoringParams()
    m = len(tokenize(f"{s.title} {s.summary}", p) & image_tokens(v, p))
    if m < p.min_matches:
        return None
    long_role = 1.0 if len(v.evidence_role) > p.tau else 0.0
    return p.alpha * m + v.credibility + p.type_bonus(v.figure_type) + p.gamma * long_role


def route_section_images(
    briefs: Sequence[PlanningBrief], section: SectionPlan, registry: UsedFigureRegistry, p: ScoringParams | None = None
) -> list[ImageCandidate]:
    p = p or ScoringParams()
    ranked = []
    for brief in briefs:
        v = brief.candidate
        if v.dedup_key in registry:
            continue
        score = score_image(v, section, p)
        if score is None or not score > p.threshold:
            continue
        # Soft prior: the enrichment stage's section hint only reorders eligible images.
        key = score + (p.section_prior if brief.recommended_section == section.title else 0.0)
        ranked.append((-key, image_sort_key(v.id), v))
    ranked.sort(key=lambda row: row[:2])
    return [v for _, _, v in ranked[: p.per_section_limit]]


def format_image_slot(cands: Sequence[ImageCandidate]) -> str:
    if not cands:
        return "none"
    lines = []
    for v in cands:
        desc = (v.ocr.visible_title if v.ocr and v.ocr.visible_title else v.alt_text) or "source figure"
        parts = [f"[{v.id}: {desc}]", f"type: {v.figure_type or 'other'}"]
        if v.evidence_role:
            parts.append(f"supports: {v.evidence_role}")
        landmarks = [a.visual_features for a in v.atoms[:3]]
        if landmarks:
            parts.append("visual landmarks: " + "; ".join(landmarks))
        lines.append("- " + " | ".join(parts))
    return "\n".join(lines)


def _heading(section: SectionPlan) -> str:
    return f"## {section.index}. {section.title}"


def _normalize_heading(markdown: str, section: SectionPlan) -> str:
    lines = markdown.strip().split("\n")
    first = next((i for i, line in enumerate(lines) if line.strip()), None)
    if first is not None and lines[first].lstrip().startswith("#"):
        lines[first] = _heading(section)
        return "\n".join(lines[first:]).strip() + "\n"
    return f"{_heading(section)}\n\n" + "\n".join(lines).strip() + "\n"


def stub_section(section: SectionPlan) -> str:
    note = section.gap or "no supported content could be generated for this section"
    return f"{_heading(section)}\n\n_Evidence for this section is limited: {note}._\n"


def section_prompt(
    section: SectionPlan, learnings_subset: Sequence[Learning], image_cands: Sequence[ImageCandidate], style_guide: str, topic: str
):
    return build_prompt(
        Template.SECTION_GENERATION,
        {
            "topic": topic,
            "section_title": section.title,
            "section_summary": section.summary,
            "style_guide": style_guide,
            "sec_learnings": "\n".join(l.prompt_line() for l in learnings_subset) or "none",
            "evidence_gap": section.gap or "none",
            "sec_images": format_image_slot(image_cands),
        },
    )


def _chat_nonempty(request, gateway, label: str) -> str:
    for attempt in (1, 2):
        try:
            text = gateway.chat(request)
        except GatewayError as exc:
            logger.warning("%s attempt %d failed: %s", label, attempt, exc)
            continue
        if text.strip():
            return text
        logger.warning("%s attempt %d returned nothing", label, attempt)
    return ""


def generate_section(
    section: SectionPlan,
    learnings_subset: Sequence[Learning],
    image_cands: Sequence[ImageCandidate],
    style_guide: str,
    topic: str,
    gateway,
) -> SectionDraft:
    wanted = set(section.evidence_ids)
    if {l.id for l in learnings_subset} != wanted:
        raise ValueError(f"section {section.index} must receive exactly the learnings it cites")
    request = section_prompt(section, learnings_subset, image_cands, style_guide, topic)
    text = _chat_nonempty(request, gateway, f"section {section.index}")
    markdown = _normalize_heading(text, section) if text.strip() else stub_section(section)
    return SectionDraft(
        section_index=section.index,
        markdown=markdown,
        visualization_specs=tuple(m.group(1).strip() for m in VIS_BLOCK_RE.finditer(markdown)),
        prompt=request.system + "\n\n" + request.user if request.system else request.user,
    )


def _names(line: str, image_id: str) -> bool:
    return re.search(rf"(?<![A-Za-z0-9_]){re.escape(image_id)}(?![0-9])", line) is not None


def _validate_once(
    markdown: str, provided: Mapping[str, str], registry: UsedFigureRegistry
) -> tuple[str, list[str]]:
    lines = markdown.split("\n")
    seen: list[str] = []
    seen_keys: set[str] = set()
    removed_ids: list[tuple[int, str]] = []
    kept_lines: set[int] = set()
    emptied: set[int] = set()

    for i, line in enumerate(lines):
        if not PLACEHOLDER_RE.search(line):
            continue

        def fix(m: re.Match, i=i) -> str:
            image_id = m.group(1)
            if image_id in seen:
                return ""
            if image_id not in provided or provided[image_id] in registry or provided[image_id] in seen_keys:
                removed_ids.append((i, image_id))
                return ""
            seen.append(image_id)
            seen_keys.add(provided[image_id])
            kept_lines.add(i)
            return m.group(0)

        new = PLACEHOLDER_RE.sub(fix, line)
        if new != line and not new.strip():
            emptied.add(i)
        lines[i] = new

    drop = set(emptied)
    for i, image_id in removed_ids:
        for step in (-1, 1):
            j = i + step
            if 0 <= j < len(lines) and not lines[j].strip() and j not in emptied:
                j += step
            if not 0 <= j < len(lines) or j in kept_lines or lines[j].lstrip().startswith("#"):
                continue
            if _names(lines[j], image_id):
                drop.add(j)
    out = "\n".join(line for i, line in enumerate(lines) if i not in drop)
    out = re.sub(r"\n{3,}", "\n\n", out)
    return out, seen


def validate_section_refs(
    draft: SectionDraft, provided: Mapping[str, str], registry: UsedFigureRegistry
) -> tuple[SectionDraft, UsedFigureRegistry]:
    """Drop placeholders that were not offered to the section or were already used.

    ``provided`` maps each offered image ID to its dedup key. Repeats of one
    ID collapse to the first occurrence; placeholders for unknown or reused
    figures take an adjacent caption line naming them along.
    """
    markdown = draft.markdown
    while True:
        fixed, kept = _validate_once(markdown, provided, registry)
        if fixed == markdown:
            break
        markdown = fixed
    registry = registry.with_keys(provided[i] for i in kept)
    return (
        SectionDraft(
            section_index=draft.section_index,
            markdown=markdown,
            used_image_ids=frozenset(kept),
            visualization_specs=tuple(m.group(1).strip() for m in VIS_BLOCK_RE.finditer(markdown)),
            prompt=draft.prompt,
        ),
        registry,
    )


def write_sections(
    plan: ReportPlan,
    learnings: Sequence[Learning],
    briefs: Sequence[PlanningBrief],
    topic: str,
    gateway,
    params: ScoringParams | None = None,
    run_dir: str | Path | None = None,
) -> tuple[list[SectionDraft], UsedFigureRegistry]:
    """Generate sections strictly in order; each one sees the figures used before it."""
    params = params or ScoringParams()
    by_id = {l.id: l for l in learnings}
    registry = UsedFigureRegistry()
    drafts = []
    sec_dir = Path(run_dir) / "sections" if run_dir else None
    if sec_dir:
        sec_dir.mkdir(parents=True, exist_ok=True)
    for section in plan.sections:
        subset = [by_id[i] for i in section.evidence_ids]
        cands = route_section_images(briefs, section, registry, params)
        draft = generate_section(section, subset, cands, plan.style_guide, topic, gateway)
        draft, registry = validate_section_refs(draft, {c.id: c.dedup_key for c in cands}, registry)
        drafts.append(draft)
        if sec_dir:
            (sec_dir / f"sec_{section.index}.md").write_text(draft.markdown, encoding="utf-8")
            (sec_dir / f"sec_{section.index}.prompt.txt").write_text(draft.prompt, encoding="utf-8")
    return drafts, registry


def write_global(
    plan: ReportPlan, learnings: Sequence[Learning], briefs: Sequence[PlanningBrief], topic: str, gateway
) -> tuple[SectionDraft, UsedFigureRegistry]:
    """Ablation: one generation call for the whole report, no per-section routing."""
    cands = [b.candidate for b in briefs]
    request = build_prompt(
        Template.GLOBAL_GENERATION,
        {
            "topic": topic,
            "reader_outline": plan.reader_outline,
            "style_guide": plan.style_guide,
            "all_learnings": "\n".join(l.prompt_line() for l in learnings) or "none",
            "images": format_image_slot(cands),
        },
    )
    text = _chat_nonempty(request, gateway, "global report")
    if not text.strip():
        text = "\n".join(stub_section(s) for s in plan.sections)
    draft = SectionDraft(0, text.strip() + "\n", prompt=request.user)
    return validate_section_refs(draft, {c.id: c.dedup_key for c in cands}, UsedFigureRegistry())
