"""End-to-end driver: research, enrichment, planning, writing, media, polish."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import asdict
from pathlib import Path

from .config import RunConfig
from .enrichment import EnrichmentResult, metadata_only_selection, run_enrichment
from .evidence import AdaptiveOutline, Learning
from .gateway import CachingGateway, MockGateway
from .media import (
    Renderer,
    SubprocessRenderer,
    anchorize,
    build_charts,
    extract_references,
    extract_visualizations,
    media_inventory,
    refine_report,
    resolve_media,
    validate_anchors,
)
from .planner import build_plan
from .research import learnings_text, run_research
from .writer import write_global, write_sections

logger = logging.getLogger(__name__)


def make_gateway(config: RunConfig):
    if config.mock_transcript:
        inner = MockGateway.from_transcript(config.mock_transcript, window=config.research.context_window)
    else:
        from .gateway.http import HttpGateway

        inner = HttpGateway(config.http)
    if config.cache:
        return CachingGateway(inner, config.output_dir / "cache.json")
    return inner


def table_of_contents(outline: AdaptiveOutline) -> str:
    lines = ["## Contents", ""]
    for node in outline.walk():
        indent = "  " * (node.depth - 1)
        number = f"{node.number}." if node.depth == 1 else node.number
        lines.append(f"{indent}- {number} {node.title}")
    return "\n".join(lines)


def _with_title_and_toc(report: str, topic: str, outline: AdaptiveOutline) -> str:
    body = report.strip()
    first = body.split("\n", 1)[0]
    if re.match(r"^#\s", first):
        title, _, rest = body.partition("\n")
    else:
        title, rest = f"# {topic}", body
    return f"{title}\n\n{table_of_contents(outline)}\n\n{rest.strip()}\n"


def assemble(
    topic: str,
    sections_markdown: list[str],
    outline: AdaptiveOutline,
    enrichment: EnrichmentResult,
    charts,
    learnings: list[Learning],
    gateway,
) -> tuple[str, dict]:
    """Resolve media, refine under anchors, restore media and append references."""
    draft = f"# {topic}\n\n" + "\n\n".join(s.strip() for s in sections_markdown) + "\n"
    resolved = resolve_media(draft, enrichment.briefs, charts)
    anchored, amap = anchorize(resolved)
    all_learnings = learnings_text(learnings)
    refined = refine_report(anchored, all_learnings, media_inventory(amap), topic, gateway)
    final = validate_anchors(refined, amap, gateway, original=anchored)
    final = _with_title_and_toc(final, topic, outline)
    references = extract_references(final, all_learnings)
    if references:
        final = final.rstrip() + "\n\n" + references
    audit = {"media_elements": len(amap), "anchors": list(amap.entries)}
    return final, audit


def run(config: RunConfig, gateway=None, renderer: Renderer | None = None) -> Path:
    """Execute every stage and return the path of ``report.md``."""
    out = config.output_dir
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_test"
        probe.write_text("", encoding="utf-8")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"output directory {out} is not writable: {exc}") from exc

    gateway = gateway if gateway is not None else make_gateway(config)
    renderer = renderer or SubprocessRenderer(config.renderer)
    try:
        research = run_research(config.topic, config.research, gateway, out)
        pool, outline = research.pool, research.outline

        if config.ablations.disable_enrichment:
            enrichment = metadata_only_selection(pool, config.caps, out)
        else:
            enrichment = run_enrichment(pool, outline, config.topic, config.caps, gateway, out)

        plan = build_plan(config.topic, outline, pool.learnings, enrichment.briefs, gateway, out)

        if config.ablations.global_generation:
            draft, _ = write_global(plan, pool.learnings, enrichment.briefs, config.topic, gateway)
            drafts = [draft]
        else:
            drafts, _ = write_sections(
                plan, pool.learnings, enrichment.briefs, config.topic, gateway, config.scoring, out
            )

        drafts, specs = extract_visualizations(drafts)
        charts = build_charts(specs, plan.style_guide, gateway, renderer, out / "media", config.chart_workers)
        report, media_audit = assemble(
            config.topic, [d.markdown for d in drafts], outline, enrichment, charts, pool.learnings, gateway
        )
        report_path = out / "report.md"
        report_path.write_text(report, encoding="utf-8")

        audit = {
            "topic": config.topic,
            "ablations": asdict(config.ablations),
            "cache": "gateway calls cached by request hash" if isinstance(gateway, CachingGateway) else "off",
            "rounds": [r.summary()["counts"] for r in research.rounds],
            "enrichment_stage_counts": enrichment.stage_counts,
            "sections": len(plan.sections),
            "charts": {
                spec.id: (
                    {
                        "iterations_used": charts[spec.id].iterations_used,
                        "forced_regenerations": charts[spec.id].forced_regenerations,
                        "critic_log": charts[spec.id].critic_log,
                        "html": charts[spec.id].html_path,
                        "png": charts[spec.id].png_path,
                    }
                    if spec.id in charts
                    else {"dropped": True}
                )
                for spec in specs
            },
            **media_audit,
        }
        (out / "run.json").write_text(json.dumps(audit, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
        return report_path
    finally:
        if isinstance(gateway, CachingGateway) and gateway.path is not None:
            gateway.save()
