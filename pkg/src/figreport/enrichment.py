"""Image enrichment funnel: prune, classify, rerank, analyze, select.

Each stage only narrows the candidate list; every drop is recorded with the
stage name and a reason so ``enrichment_report.json`` can explain the result.
"""

from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import NamedTuple, Sequence
from urllib.parse import urlsplit

from .evidence import (
    UNASSIGNED,
    AdaptiveOutline,
    EvidenceAtom,
    EvidencePool,
    ImageCandidate,
    Learning,
    OcrResult,
    image_sort_key,
    render_outline,
)
from .gateway import GatewayError, Template, build_prompt
from .llmtext import clamp, parse_json_block
from .research import learnings_text
from .tokens import jaccard, title_tokens

logger = logging.getLogger(__name__)

DEFAULT_ASSET_TERMS = (
    "logo",
    "avatar",
    "icon",
    "thumbnail",
    "banner",
    "favicon",
    "sprite",
    "badge",
    "emoji",
    "share button",
    "share",
)
DEFAULT_TECHNICAL_TERMS = (
    "figure",
    "fig",
    "table",
    "chart",
    "diagram",
    "architecture",
    "benchmark",
    "plot",
    "graph",
    "pipeline",
    "schematic",
    "curve",
    "ablation",
)


@dataclass(frozen=True)
class FunnelCaps:
    after_classification: int = 100
    after_rerank: int = 50
    vlm_budget: int = 20
    final_cap: int = 15
    classify_batch: int = 12
    section_match_threshold: float = 0.4
    asset_terms: tuple[str, ...] = DEFAULT_ASSET_TERMS
    technical_terms: tuple[str, ...] = DEFAULT_TECHNICAL_TERMS
    max_workers: int = 8
    learnings_prompt_chars: int = 45_000

    def __post_init__(self) -> None:
        chain = (self.after_classification, self.after_rerank, self.vlm_budget, self.final_cap)
        if min(chain) < 1 or list(chain) != sorted(chain, reverse=True):
            raise ValueError(f"funnel caps must be nonincreasing and >= 1, got {chain}")
        if self.classify_batch < 1:
            raise ValueError("classify_batch must be >= 1")


@dataclass(frozen=True)
class PlanningBrief:
    image_id: str
    figure_type: str
    atoms: tuple[EvidenceAtom, ...]
    recommended_section: str
    integration_advice: str
    composite_score: float
    candidate: ImageCandidate
    supported_claims: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "url": self.candidate.url,
            "page_url": self.candidate.page_url,
            "figure_type": self.figure_type,
            "composite_score": self.composite_score,
            "credibility": self.candidate.credibility,
            "recommended_section": self.recommended_section,
            "evidence_role": self.candidate.evidence_role,
            "integration_advice": self.integration_advice,
            "supported_claims": list(self.supported_claims),
            "atoms": [asdict(a) for a in self.atoms],
        }


class Decision(NamedTuple):
    keep: bool
    reason: str


@dataclass(frozen=True)
class Classification:
    image_id: str
    keep: bool
    figure_type: str = "other"
    relevance: float = 0.0
    primary_source: bool = False


@dataclass
class EnrichmentResult:
    briefs: list[PlanningBrief]
    stage_counts: dict[str, int]
    drops: list[dict] = field(default_factory=list)
    bypassed: bool = False
    unanalyzed: list[str] = field(default_factory=list)

    def to_report(self) -> dict:
        return {
            "bypassed": self.bypassed,
            "stage_counts": self.stage_counts,
            "drops": self.drops,
            "unanalyzed": self.unanalyzed,
            "briefs": [b.to_dict() for b in self.briefs],
        }


def _by_id(c: ImageCandidate) -> tuple[int, str]:
    return image_sort_key(c.id)


# ---------------------------------------------------------------------------
# Stage 1: heuristic pruning
# ---------------------------------------------------------------------------


def _has_term(text: str, term: str) -> bool:
    return re.search(rf"(?<![a-z0-9]){re.escape(term)}(?:s)?(?![a-z0-9])", text) is not None


def heuristic_prune(c: ImageCandidate, caps: FunnelCaps | None = None) -> Decision:
    """Drop obvious web assets unless a technical signal vouches for them."""
    caps = caps or FunnelCaps()
    filename = urlsplit(c.url).path.rsplit("/", 1)[-1]
    text = " ".join((re.sub(r"[_\-.]+", " ", filename), c.alt_text, c.surrounding_text)).lower()
    asset = next((t for t in caps.asset_terms if _has_term(text, t)), None)
    if asset is None:
        return Decision(True, "no asset signal")
    technical = next((t for t in caps.technical_terms if _has_term(text, t)), None)
    if technical is not None:
        return Decision(True, f"asset signal {asset!r} overridden by {technical!r}")
    return Decision(False, f"asset signal {asset!r} without technical signal")


# ---------------------------------------------------------------------------
# Stage 2: context classification
# ---------------------------------------------------------------------------


def _candidate_brief(c: ImageCandidate, **extra) -> dict:
    parts = urlsplit(c.url)
    row = {
        "image_id": c.id,
        "file": parts.path.rsplit("/", 1)[-1],
        "source_host": urlsplit(c.page_url).hostname or parts.hostname or "",
        "alt": c.alt_text,
        "context": c.surrounding_text,
    }
    row.update({k: v for k, v in extra.items() if v not in (None, "", ())})
    return row


def _items(payload) -> list[dict]:
    if isinstance(payload, dict):
        for key in ("candidates", "images", "results", "items"):
            if isinstance(payload.get(key), list):
                payload = payload[key]
                break
        else:
            payload = [payload]
    return [p for p in payload if isinstance(p, dict)]


def _truthy(value) -> bool:
    if isinstance(value, str):
        return value.strip().lower() in ("true", "yes", "1", "keep")
    return bool(value)


def classify_context(
    batch: Sequence[ImageCandidate], topic: str, gateway, caps: FunnelCaps | None = None
) -> list[Classification]:
    """One classification per candidate, in input order. Missing entries mean keep=false."""
    caps = caps or FunnelCaps()
    if len(batch) > caps.classify_batch:
        raise ValueError(f"batch of {len(batch)} exceeds classify_batch={caps.classify_batch}")
    if not batch:
        return []
    request = build_prompt(
        Template.CONTEXT_CLASSIFY,
        {
            "topic": topic,
            "candidates_json": json.dumps([_candidate_brief(c) for c in batch], indent=1, ensure_ascii=False),
        },
    )
    try:
        items = _items(parse_json_block(gateway.chat(request)))
    except (GatewayError, ValueError) as exc:
        logger.warning("context classification failed for a batch of %d: %s", len(batch), exc)
        items = []
    found: dict[str, dict] = {}
    for item in items:
        found.setdefault(str(item.get("image_id", "")), item)
    out = []
    for c in batch:
        item = found.get(c.id)
        if item is None:
            out.append(Classification(c.id, False))
            continue
        out.append(
            Classification(
                c.id,
                _truthy(item.get("keep", False)),
                str(item.get("figure_type") or "other"),
                clamp(item.get("relevance"), 0.0, 5.0, 0.0),
                _truthy(item.get("primary_source", False)),
            )
        )
    return out


def metadata_credibility(primary_source: bool) -> float:
    """Fallback credibility when the selection model does not report one."""
    return 1.0 if primary_source else 0.5


def context_stage(
    cands: Sequence[ImageCandidate], topic: str, gateway, caps: FunnelCaps, drops: list[dict]
) -> list[ImageCandidate]:
    batches = [cands[i : i + caps.classify_batch] for i in range(0, len(cands), caps.classify_batch)]
    with ThreadPoolExecutor(max_workers=caps.max_workers) as pool:
        results = list(pool.map(lambda b: classify_context(b, topic, gateway, caps), batches))
    keepers: list[ImageCandidate] = []
    for batch, verdicts in zip(batches, results):
        for c, v in zip(batch, verdicts):
            if not v.keep:
                drops.append({"image_id": c.id, "stage": "context_classify", "reason": "classified as non-evidential"})
                continue
            keepers.append(
                replace(
                    c,
                    figure_type=v.figure_type,
                    relevance=v.relevance,
                    credibility=metadata_credibility(v.primary_source),
                )
            )
    keepers.sort(key=lambda c: (-(c.relevance or 0.0), _by_id(c)))
    for c in keepers[caps.after_classification :]:
        drops.append({"image_id": c.id, "stage": "context_classify", "reason": "over classification cap"})
    return keepers[: caps.after_classification]


# ---------------------------------------------------------------------------
# Stage 3: topic reranking
# ---------------------------------------------------------------------------


def match_section(recommended: str | None, titles: Sequence[str], threshold: float = 0.4) -> str:
    """Map a free-form section name onto the closest outline title, else ``unassigned``."""
    if not recommended:
        return UNASSIGNED
    want = title_tokens(recommended)
    best, best_score = UNASSIGNED, 0.0
    for title in titles:
        score = jaccard(want, title_tokens(title))
        if score > best_score:
            best, best_score = title, score
    return best if best_score >= threshold else UNASSIGNED


def _learning_block(learnings: Sequence[Learning], caps: FunnelCaps) -> str:
    return learnings_text(learnings, caps.learnings_prompt_chars) or "none"


def rerank_by_topic(
    cands: Sequence[ImageCandidate],
    topic: str,
    learnings: Sequence[Learning],
    outline: AdaptiveOutline,
    gateway,
    caps: FunnelCaps | None = None,
    drops: list[dict] | None = None,
) -> list[ImageCandidate]:
    caps = caps or FunnelCaps()
    drops = drops if drops is not None else []
    if not cands:
        return []
    titles = outline.top_titles()
    request = build_prompt(
        Template.IMAGE_RERANK,
        {
            "topic": topic,
            "outline_clean": render_outline(outline, "reader") if outline else "(no outline)",
            "trimmed_learnings": _learning_block(learnings, caps),
            "candidates_json": json.dumps(
                [_candidate_brief(c, figure_type=c.figure_type, relevance=c.relevance) for c in cands],
                indent=1,
                ensure_ascii=False,
            ),
        },
    )
    items = None
    for attempt in (1, 2):
        try:
            items = _items(parse_json_block(gateway.chat(request), list))
            break
        except (GatewayError, ValueError) as exc:
            logger.warning("topic rerank attempt %d failed: %s", attempt, exc)
    if items is None:
        for c in cands[caps.after_rerank :]:
            drops.append({"image_id": c.id, "stage": "topic_rerank", "reason": "over rerank cap (fallback order)"})
        return list(cands[: caps.after_rerank])

    by_id = {c.id: c for c in cands}
    ranked: dict[str, ImageCandidate] = {}
    for item in items:
        image_id = str(item.get("image_id", ""))
        c = by_id.get(image_id)
        if c is None or image_id in ranked:
            continue
        if not _truthy(item.get("should_keep", True)):
            drops.append({"image_id": image_id, "stage": "topic_rerank", "reason": "should_keep=false"})
            ranked[image_id] = None  # type: ignore[assignment]
            continue
        ranked[image_id] = replace(
            c,
            relevance=clamp(item.get("relevance_score"), 0.0, 5.0, c.relevance or 0.0),
            recommended_section=match_section(item.get("recommended_section"), titles, caps.section_match_threshold),
            evidence_role=str(item.get("why_relevant") or c.evidence_role),
        )
    for c in cands:
        if c.id not in ranked:
            drops.append({"image_id": c.id, "stage": "topic_rerank", "reason": "not ranked by model"})
    kept = sorted((c for c in ranked.values() if c is not None), key=lambda c: (-(c.relevance or 0.0), _by_id(c)))
    for c in kept[caps.after_rerank :]:
        drops.append({"image_id": c.id, "stage": "topic_rerank", "reason": "over rerank cap"})
    return kept[: caps.after_rerank]


# ---------------------------------------------------------------------------
# Stage 4: visual analysis
# ---------------------------------------------------------------------------

_FIELD_RE = re.compile(
    r"^\s*[*\-]*\s*(visible_title|visible_text|ocr_keywords|ocr_summary|deductive_evidence_atoms)\s*[*]*\s*:\s*(.*)$",
    re.IGNORECASE,
)
_ARROW_RE = re.compile(r"\s*(?:->|→)\s*")


def _strip_atom_part(part: str) -> str:
    part = re.sub(r"^\s*(?:\d+[.)]|[-*•])\s*", "", part.strip())
    return part.strip().strip("[]").strip()


def parse_visual_analysis(text: str, image_id: str) -> tuple[OcrResult, tuple[EvidenceAtom, ...]] | None:
    """Parse the plain-text VLM answer; None when none of the fields are present."""
    fields: dict[str, str] = {}
    atom_lines: list[str] = []
    current = None
    for line in text.splitlines():
        m = _FIELD_RE.match(line)
        if m:
            current = m.group(1).lower()
            fields[current] = m.group(2).strip()
            if current == "deductive_evidence_atoms" and _ARROW_RE.search(m.group(2)):
                atom_lines.append(m.group(2))
            continue
        if current == "deductive_evidence_atoms" and _ARROW_RE.search(line):
            atom_lines.append(line)
        elif current in ("visible_text", "ocr_summary") and line.strip():
            fields[current] += " " + line.strip()
    if not fields:
        return None
    atoms = []
    for line in atom_lines:
        parts = [_strip_atom_part(p) for p in _ARROW_RE.split(line.strip())]
        if len(parts) == 3 and all(parts):
            atoms.append(EvidenceAtom(*parts, image_id=image_id))
    keywords = tuple(k for k in re.split(r"[,;]", fields.get("ocr_keywords", "")) if k.strip())
    ocr = OcrResult(
        visible_title=fields.get("visible_title", ""),
        visible_text=fields.get("visible_text", ""),
        keywords=keywords,
        summary=fields.get("ocr_summary", ""),
    )
    return ocr, tuple(atoms)


def visual_analyze(c: ImageCandidate, topic: str, gateway) -> ImageCandidate:
    """Attach OCR signals and evidence atoms; on failure return ``c`` unanalyzed."""
    request = build_prompt(Template.VLM_ANALYSIS, {"topic": topic}, images=(c.url,))
    try:
        parsed = parse_visual_analysis(gateway.chat(request), c.id)
    except GatewayError as exc:
        logger.warning("visual analysis failed for %s: %s", c.id, exc)
        return c
    if parsed is None:
        logger.warning("visual analysis for %s had no recognizable fields", c.id)
        return c
    ocr, atoms = parsed
    return replace(c, ocr=ocr, atoms=atoms)


# ---------------------------------------------------------------------------
# Stage 5: final selection
# ---------------------------------------------------------------------------


def _dedup_cap(cands: Sequence[ImageCandidate], cap: int) -> list[ImageCandidate]:
    seen: set[str] = set()
    out = []
    for c in cands:
        if c.dedup_key in seen:
            continue
        seen.add(c.dedup_key)
        out.append(c)
        if len(out) == cap:
            break
    return out


def _brief(c: ImageCandidate, advice: str = "", claims: Sequence[str] = ()) -> PlanningBrief:
    return PlanningBrief(
        image_id=c.id,
        figure_type=c.figure_type or "other",
        atoms=c.atoms,
        recommended_section=c.recommended_section or UNASSIGNED,
        integration_advice=advice,
        composite_score=c.composite_score if c.composite_score is not None else 0.0,
        candidate=c,
        supported_claims=tuple(claims),
    )


def final_select(
    cands: Sequence[ImageCandidate],
    topic: str,
    learnings: Sequence[Learning],
    gateway,
    caps: FunnelCaps | None = None,
    drops: list[dict] | None = None,
) -> list[PlanningBrief]:
    caps = caps or FunnelCaps()
    drops = drops if drops is not None else []
    analyzed = [c for c in cands if c.analyzed]
    if not analyzed:
        return []
    rows = [
        _candidate_brief(
            c,
            figure_type=c.figure_type,
            relevance_score=c.relevance,
            recommended_section=c.recommended_section,
            visible_title=c.ocr.visible_title,
            ocr_keywords=list(c.ocr.keywords),
            ocr_summary=c.ocr.summary,
            evidence_atoms=[a.render() for a in c.atoms],
        )
        for c in analyzed
    ]
    request = build_prompt(
        Template.FINAL_SELECT,
        {
            "topic": topic,
            "trimmed_learnings": _learning_block(learnings, caps),
            "candidates_json": json.dumps(rows, indent=1, ensure_ascii=False),
        },
    )
    try:
        items = _items(parse_json_block(gateway.chat(request), list))
    except (GatewayError, ValueError) as exc:
        logger.warning("final selection failed, falling back to relevance order: %s", exc)
        ranked = sorted(analyzed, key=lambda c: (-(c.relevance or 0.0), _by_id(c)))
        chosen = _dedup_cap(
            [
                replace(c, composite_score=c.relevance or 0.0, keep_decision=True, evidence_role=c.evidence_role or c.ocr.summary)
                for c in ranked
            ],
            caps.final_cap,
        )
        return [_brief(c) for c in chosen]

    by_id = {c.id: c for c in analyzed}
    accepted: list[tuple[ImageCandidate, str, tuple[str, ...]]] = []
    decided: set[str] = set()
    for item in items:
        image_id = str(item.get("image_id", ""))
        c = by_id.get(image_id)
        if c is None or image_id in decided:
            continue
        decided.add(image_id)
        if not _truthy(item.get("use", False)):
            drops.append({"image_id": image_id, "stage": "final_select", "reason": "rejected by selector"})
            continue
        credibility = item.get("credibility")
        updated = replace(
            c,
            keep_decision=True,
            composite_score=clamp(item.get("composite_score"), 0.0, 5.0, 0.0),
            credibility=clamp(credibility, 0.0, 1.0, c.credibility) if credibility is not None else c.credibility,
            evidence_role=str(item.get("evidence_role") or c.evidence_role or c.ocr.summary),
        )
        claims = item.get("supported_claims") or []
        claims = tuple(str(x) for x in claims) if isinstance(claims, list) else (str(claims),)
        accepted.append((updated, str(item.get("integration_advice") or ""), claims))
    for c in analyzed:
        if c.id not in decided:
            drops.append({"image_id": c.id, "stage": "final_select", "reason": "not judged by selector"})

    accepted.sort(key=lambda row: (-(row[0].composite_score or 0.0), _by_id(row[0])))
    extras = {row[0].id: row[1:] for row in accepted}
    chosen = _dedup_cap([row[0] for row in accepted], caps.final_cap)
    chosen_ids = {c.id for c in chosen}
    for c, _, _ in accepted:
        if c.id not in chosen_ids:
            drops.append({"image_id": c.id, "stage": "final_select", "reason": "duplicate or over final cap"})
    return [_brief(c, *extras[c.id]) for c in chosen]


# ---------------------------------------------------------------------------
# Composition
# ---------------------------------------------------------------------------

STAGES = ("input", "heuristic_prune", "context_classify", "topic_rerank", "visual_analysis", "final_select")


def run_enrichment(
    pool: EvidencePool,
    outline: AdaptiveOutline,
    topic: str,
    caps: FunnelCaps,
    gateway,
    run_dir: str | Path | None = None,
) -> EnrichmentResult:
    drops: list[dict] = []
    counts = {"input": len(pool.images)}

    pruned = []
    for c in sorted(pool.images, key=_by_id):
        decision = heuristic_prune(c, caps)
        if decision.keep:
            pruned.append(c)
        else:
            drops.append({"image_id": c.id, "stage": "heuristic_prune", "reason": decision.reason})
    counts["heuristic_prune"] = len(pruned)

    classified = context_stage(pruned, topic, gateway, caps, drops)
    counts["context_classify"] = len(classified)

    ranked = rerank_by_topic(classified, topic, pool.learnings, outline, gateway, caps, drops)
    counts["topic_rerank"] = len(ranked)

    budget = ranked[: caps.vlm_budget]
    for c in ranked[caps.vlm_budget :]:
        drops.append({"image_id": c.id, "stage": "visual_analysis", "reason": "outside VLM budget"})
    with ThreadPoolExecutor(max_workers=caps.max_workers) as executor:
        analyzed = list(executor.map(lambda c: visual_analyze(c, topic, gateway), budget))
    unanalyzed = [c.id for c in analyzed if not c.analyzed]
    for image_id in unanalyzed:
        drops.append({"image_id": image_id, "stage": "visual_analysis", "reason": "unanalyzed"})
    analyzed = [c for c in analyzed if c.analyzed]
    counts["visual_analysis"] = len(analyzed)

    briefs = final_select(analyzed, topic, pool.learnings, gateway, caps, drops)
    counts["final_select"] = len(briefs)

    result = EnrichmentResult(briefs, counts, drops, unanalyzed=unanalyzed)
    _persist(result, run_dir)
    return result


def metadata_only_selection(
    pool: EvidencePool, caps: FunnelCaps, run_dir: str | Path | None = None
) -> EnrichmentResult:
    """Ablation: no model calls; keep the first images that survive pruning."""
    drops: list[dict] = []
    kept = []
    for c in sorted(pool.images, key=_by_id):
        decision = heuristic_prune(c, caps)
        if not decision.keep:
            drops.append({"image_id": c.id, "stage": "heuristic_prune", "reason": decision.reason})
            continue
        kept.append(replace(c, figure_type="other", evidence_role=c.alt_text, recommended_section=UNASSIGNED))
    chosen = _dedup_cap(kept, caps.final_cap)
    counts = {"input": len(pool.images), "heuristic_prune": len(kept), "final_select": len(chosen)}
    result = EnrichmentResult([_brief(c) for c in chosen], counts, drops, bypassed=True)
    _persist(result, run_dir)
    return result


def _persist(result: EnrichmentResult, run_dir: str | Path | None) -> None:
    if not run_dir:
        return
    path = Path(run_dir) / "enrichment_report.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(result.to_report(), indent=2, ensure_ascii=False, sort_keys=True) + "\n", encoding="utf-8")
