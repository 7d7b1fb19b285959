"""Report plan: per-section evidence maps, gap notes and the style guide."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .enrichment import PlanningBrief
from .evidence import AdaptiveOutline, Learning, render_node, render_outline
from .gateway import GatewayError, Template, build_prompt
from .llmtext import extract_tag
from .research import learnings_text

logger = logging.getLogger(__name__)

DEFAULT_STYLE_GUIDE = """\
Tone: neutral, analytical, precise; prefer concrete numbers over adjectives.
Charts: one accent color (#1f77b4) against neutral greys; highlight only the series that carries the claim.
Axes: always labeled with units; start value axes at zero unless the range makes that misleading.
Titles: state the takeaway, not the chart type.
Layout: 700px wide, generous margins, no legend when a direct label fits.
Source figures: introduce each figure before it appears and name what the reader should look at."""


@dataclass(frozen=True)
class SectionPlan:
    index: int
    title: str
    summary: str
    evidence_ids: tuple[int, ...]
    gap: str | None = None

    @property
    def evidence_sparse(self) -> bool:
        return not self.evidence_ids

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "title": self.title,
            "summary": self.summary,
            "evidence_ids": list(self.evidence_ids),
            "gap": self.gap,
            "evidence_sparse": self.evidence_sparse,
        }


@dataclass(frozen=True)
class ReportPlan:
    sections: tuple[SectionPlan, ...]
    reader_outline: str
    style_guide: str

    def __post_init__(self) -> None:
        if not self.sections:
            raise ValueError("a report plan needs at least one section")

    def to_dict(self) -> dict:
        # The style guide lives in its own file; plan.json stays model-independent.
        return {"sections": [s.to_dict() for s in self.sections], "reader_outline": self.reader_outline}


def build_evidence_map(outline: AdaptiveOutline) -> list[SectionPlan]:
    plans = []
    for k, node in enumerate(outline.nodes, start=1):
        gaps = node.gap_texts()
        plans.append(
            SectionPlan(
                index=k,
                title=node.title,
                summary=render_node(node, "reader"),
                evidence_ids=tuple(node.citation_ids()),
                gap="; ".join(gaps) if gaps else None,
            )
        )
    return plans


def finalize_outline(outline: AdaptiveOutline) -> tuple[str, str]:
    """(internal, reader) renderings of the same tree."""
    return render_outline(outline, "internal"), render_outline(outline, "reader")


def figure_plan_text(briefs: Sequence[PlanningBrief]) -> str:
    if not briefs:
        return "none available"
    lines = []
    for b in briefs:
        role = b.candidate.evidence_role or b.candidate.alt_text
        lines.append(f"- {b.image_id} ({b.figure_type}, section: {b.recommended_section}): {role}")
    return "\n".join(lines)


def generate_style_guide(
    topic: str, learnings: Sequence[Learning], briefs: Sequence[PlanningBrief], gateway, learnings_chars: int = 45_000
) -> str:
    request = build_prompt(
        Template.STYLE_GUIDE,
        {
            "topic": topic,
            "learning_str": learnings_text(learnings, learnings_chars),
            "figure_plan_text": figure_plan_text(briefs),
        },
    )
    try:
        guide = extract_tag(gateway.chat(request), "style_guide")
    except GatewayError as exc:
        logger.warning("style guide request failed: %s", exc)
        guide = None
    if guide is None or not guide.strip():
        logger.warning("style guide missing <style_guide> block, using the default guide")
        return DEFAULT_STYLE_GUIDE
    return guide.strip()


def build_plan(
    topic: str,
    outline: AdaptiveOutline,
    learnings: Sequence[Learning],
    briefs: Sequence[PlanningBrief],
    gateway,
    run_dir: str | Path | None = None,
) -> ReportPlan:
    valid = {l.id for l in learnings}
    sections = build_evidence_map(outline)
    for s in sections:
        unknown = set(s.evidence_ids) - valid
        if unknown:
            raise ValueError(f"section {s.index} cites unknown learnings {sorted(unknown)}")
    _, reader = finalize_outline(outline)
    plan = ReportPlan(tuple(sections), reader, generate_style_guide(topic, learnings, briefs, gateway))
    if run_dir:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "plan.json").write_text(
            json.dumps(plan.to_dict(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
        )
        (run_dir / "style_guide.md").write_text(plan.style_guide + "\n", encoding="utf-8")
    return plan
