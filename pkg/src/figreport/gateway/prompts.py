"""Prompt templates for every model-mediated step, and ``build_prompt``.

Slots are written ``{name}``. Substitution is a single regex pass over the
template text, so literal JSON braces in a template and braces inside slot
values are left alone.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Any, Mapping

from .base import GENERATION, VISUAL, ChatRequest, ImagePayload


class PromptError(KeyError):
    def __str__(self) -> str:
        return str(self.args[0])


class Template(str, Enum):
    INITIAL_QUERY = "initial_query"
    OUTLINE_QUERY = "outline_query"
    LEARNING_EXTRACTION = "learning_extraction"
    OUTLINE_UPDATE = "outline_update"
    CONTEXT_CLASSIFY = "context_classify"
    IMAGE_RERANK = "image_rerank"
    VLM_ANALYSIS = "vlm_analysis"
    FINAL_SELECT = "final_select"
    STYLE_GUIDE = "style_guide"
    SECTION_GENERATION = "section_generation"
    GLOBAL_GENERATION = "global_generation"
    CHART_ACTOR = "chart_actor"
    CHART_REVISE = "chart_revise"
    CHART_CRITIC = "chart_critic"
    CHART_COMPARE = "chart_compare"
    REPORT_REFINE = "report_refine"
    ANCHOR_REPAIR = "anchor_repair"
    JUDGE_SINGLE = "judge_single"


@dataclass(frozen=True)
class _Spec:
    system: str
    user: str
    role: str = GENERATION


_RESEARCHER_SYSTEM = """\
You are an expert researcher. Be detailed, value good arguments over authority,
and consider recent or emerging developments when the user asks about them."""

_TEMPLATES: dict[Template, _Spec] = {}

_TEMPLATES[Template.INITIAL_QUERY] = _Spec(
    _RESEARCHER_SYSTEM,
    """\
Given the following prompt from the user, generate a list of SERP queries to
research the topic. Return a maximum of {queries_num} queries.
Make sure each query is unique and not similar to the others.

To find high-quality visual evidence, include visual-focused keywords such as
"architecture diagram", "performance benchmark chart", "comparison table", or
"visual schematic" in at least half of the generated queries.

OUTPUT FORMAT: Return only the queries, one per line.

<prompt>{query}</prompt>
Previous learnings:
{learning_str}""",
)

_TEMPLATES[Template.OUTLINE_QUERY] = _Spec(
    _RESEARCHER_SYSTEM,
    """\
Given the current outline with evidence coverage and gaps, generate
{queries_num} targeted search queries for the next research round. Prioritize
Gap entries and weakly supported sections, avoid previously used queries, and
include visual-focused keywords in at least half of the queries.

OUTPUT FORMAT: Return only the queries, one per line.

<prompt>{topic}</prompt>
Current outline:
{current_outline}
Previously used queries:
{previous_queries}
Latest learnings:
{learning_str}""",
)

_TEMPLATES[Template.LEARNING_EXTRACTION] = _Spec(
    "You are an expert researcher extracting information from web pages.",
    """\
Given the following contents from a SERP search for <query>{query}</query>,
generate up to {learning_num} concise, detailed, information-dense learnings.
Include Markdown hyperlinks, named entities, exact metrics, dates, and useful
tables or lists.

If the contents contain image placeholders in the format [Image_X: description],
strictly preserve them in the extracted learnings. For each referenced image,
produce a deductive_evidence_atom with:
1. Visual Features: what is explicitly visible in the image.
2. Deductive Fact: the factual or quantitative claim supported by the image.
3. Rationale: how the image acts as evidence for the broader topic.

Also return up to {question_num} follow-up questions for further research.

OUTPUT FORMAT: Return one JSON object:
{"learnings": [{"text": "...", "evidence_atoms": [{"image_id": "Image_X", "visual_features": "...", "deductive_fact": "...", "rationale": "..."}]}], "follow_up_questions": ["..."]}

<contents>{contents}</contents>""",
)

_TEMPLATES[Template.OUTLINE_UPDATE] = _Spec(
    """\
You are an expert research planner. Maintain a living Markdown outline that
evolves as new evidence arrives. Update it by assigning new learning IDs to
claims via <citation> tags, restructuring sections when new subtopics appear,
and recording remaining evidence gaps.""",
    """\
Topic: {topic}
Current outline:
{current_outline}
New learnings from round {round_num}:
{new_learnings_str}
All learnings so far:
{all_learnings_str}

Return only:
<adaptive_outline>
# 1. Section Title
## 1.1 Subsection Title
### 1.1.1 Sub-subsection Title
a. Specific point <citation>id 1, id 3</citation>
Gap: evidence still needed, if applicable
</adaptive_outline>""",
)

_TEMPLATES[Template.CONTEXT_CLASSIFY] = _Spec(
    """\
You are a web-figure triage assistant. Judge each candidate image only from its
metadata and surrounding webpage text. Keep images that are likely to carry
evidence (diagrams, charts, tables, photos of the subject); reject decorative,
navigational, or advertising assets. Return strict JSON only.""",
    """\
Topic: {topic}

For every candidate return one JSON array item:
{"image_id": "...", "keep": true, "figure_type": "architecture|pipeline|hardware|schematic|result_chart|benchmark|ablation_table|photo|map|other", "relevance": 0-5, "primary_source": false}

Candidates:
{candidates_json}""",
)

_TEMPLATES[Template.IMAGE_RERANK] = _Spec(
    """\
You are an expert research assistant selecting source images for a report topic.
Use the topic and learnings to decide which candidate images are worth keeping.
Return strict JSON only.""",
    """\
Topic:
{topic}

Report Outline:
{outline_clean}

Learnings:
{trimmed_learnings}

Rank these image candidates for relevance to the topic and align each useful
candidate with an actual section title from the outline.

Return a JSON array. Each item must be:
{
  "image_id": "...",
  "relevance_score": 0-5,
  "should_keep": true,
  "recommended_section": "...",
  "why_relevant": "..."
}

Candidates:
{candidates_json}""",
)

_TEMPLATES[Template.VLM_ANALYSIS] = _Spec(
    """\
You are an OCR and technical-figure understanding assistant.
Read visible text from the figure and extract structured visual evidence.
Return plain text with exactly these fields:
visible_title: ...
visible_text: ...
ocr_keywords: keyword1, keyword2, ...
ocr_summary: one sentence
deductive_evidence_atoms: Extract 3-5 key evidence atoms. For each atom, provide
[Visual Feature] -> [Deductive Fact] -> [Rationale].""",
    """\
Topic: {topic}
Read this image carefully and extract OCR-like signals and evidence atoms.""",
    role=VISUAL,
)

_TEMPLATES[Template.FINAL_SELECT] = _Spec(
    """\
You are the final editor choosing which analyzed source figures a research
report will use. Combine the context classification, topical ranking, and
visual analysis of each candidate. Return strict JSON only.""",
    """\
Topic: {topic}

Learnings:
{trimmed_learnings}

For every candidate return one JSON array item:
{"image_id": "...", "use": true, "composite_score": 0-5, "credibility": 0-1, "evidence_role": "the claim this figure supports", "supported_claims": ["..."], "integration_advice": "..."}

Candidates:
{candidates_json}""",
)

_TEMPLATES[Template.STYLE_GUIDE] = _Spec(
    """\
You are an expert report-generation assistant specialized in creating
professional documents that combine insightful analysis with visualizations.""",
    """\
Using the provided topic and previous learnings, produce a visualization style
guide for downstream section generation. In the default pipeline, the report
structure is inherited from the adaptive research outline; this prompt mainly
provides chart tone, color usage, information hierarchy, and figure style.

Topic: {topic}
Previous learnings: {learning_str}
Candidate figure evidence, if available: {figure_plan_text}

Return:
<style_guide>
[visualization style guide here]
</style_guide>""",
)

_SECTION_RULES = """\
Citation and verifiability rules:
- For every important quantitative claim, benchmark, chronology, causal
  explanation, comparison, or empirical judgment, attach a supporting Markdown
  hyperlink in the same sentence or immediately following sentence.
- Prefer source links already present in the routed learnings, especially primary
  or directly relevant sources.
- Do not rely on a single citation at the end of a long paragraph to support many
  distinct claims.
- If a claim is only partially supported, narrow or soften it instead of stating
  it strongly.
- If you compare systems, methods, periods, or regions, make sure each side of
  the comparison has nearby evidence.
- Keep the section auditable on its own.

Image grounding rules:
- Only insert an image if it directly supports a concrete claim in this section.
- Do not use weakly related or decorative images.
- Use only the provided image IDs; never make up fake image IDs.
- Do not use the same image multiple times in the report.
- Every inserted image must be explicitly explained in the surrounding text.
- If you insert an source figure, reference 1-2 concrete visual landmarks such
  as labels, trends, module names, colors, or spatial layout.
- Usually insert no more than 1-2 source figures in a section.

Generated visualization rules:
- Generate a <visualization> block only when real data or a grounded mechanism
  from the routed learnings supports it.
- Every visual element must come from the routed learnings or section context.
- Do not use dummy or fake data such as "Alpha", "Beta", or "Sample Bar Chart".
- If prose or available original source images already communicate the point
  clearly, do not generate an additional chart.
- A <visualization> block must contain a complete JSON design specification and
  must be closed immediately with </visualization>."""

_TEMPLATES[Template.SECTION_GENERATION] = _Spec(
    "",
    """\
You are writing a section for a research report on the topic: "{topic}".
This section is titled: "{section_title}".
Summary/Outline of this section: "{section_summary}".

Use the Visualization Style Guide:
{style_guide}

Use the following routed research learnings as your knowledge base:
{sec_learnings}

Known evidence gap for this section, if any:
{evidence_gap}

Available Image Placeholders for this section:
{sec_images}

"""
    + _SECTION_RULES
    + """

Write the full Markdown content for this section now.""",
)

_TEMPLATES[Template.GLOBAL_GENERATION] = _Spec(
    "",
    """\
You are writing a complete research report on the topic: "{topic}".
Follow this report outline, one "## n. Title" heading per top-level section:
{reader_outline}

Use the Visualization Style Guide:
{style_guide}

Use the following research learnings as your knowledge base:
{all_learnings}

Available Image Placeholders for the report:
{images}

"""
    + _SECTION_RULES
    + """

Write the full Markdown report now.""",
)

_CHART_ACTOR_SYSTEM = """\
You are a HTML/D3.js V7 implementation expert who transforms visualization
designs into working code."""

_CHART_ACTOR_RULES = """\
Implement the visualization design specification with HTML and D3.js.
Treat the specification as binding. Do not replace it with a generic template.
Use titles, labels, data, captions, and semantic structure from the specification.
Import D3.js using <script src="https://d3js.org/d3.v7.min.js"></script>.
Set the root SVG/container width to exactly 700px, use sufficient margins, and
return a complete self-contained HTML file in a ```html code block."""

_TEMPLATES[Template.CHART_ACTOR] = _Spec(
    _CHART_ACTOR_SYSTEM,
    _CHART_ACTOR_RULES
    + """

Visualization design specification:
{spec_json}

Visualization style guide:
{style_guide}""",
    role=VISUAL,
)

_TEMPLATES[Template.CHART_REVISE] = _Spec(
    _CHART_ACTOR_SYSTEM,
    _CHART_ACTOR_RULES
    + """

Revise the previous implementation to fix every problem listed below.

Problems:
{feedback}

Visualization design specification:
{spec_json}

Visualization style guide:
{style_guide}

Previous implementation:
{previous_html}""",
    role=VISUAL,
)

_TEMPLATES[Template.CHART_CRITIC] = _Spec(
    "You review rendered D3.js charts against their design specification.",
    """\
Given a screenshot of the rendered HTML and console messages, check for:
design-spec mismatch, placeholder content, excessive annotations, overlapping
elements, sizing problems, excessive margins, and unreadable labels. For each
issue, describe the problem, its location, and the relevant elements. If no
issues are found, end with "No issues found."

Design specification:
{spec_json}

Console messages:
{console}""",
    role=VISUAL,
)

_TEMPLATES[Template.CHART_COMPARE] = _Spec(
    "You compare two rendered charts built from the same design specification.",
    """\
Two candidate renderings of the design specification below are attached, A first
and B second. Pick the one that better follows the specification with cleaner
labels, layout and margins. Answer with a single letter: A or B.

Design specification:
{spec_json}""",
    role=VISUAL,
)

_TEMPLATES[Template.REPORT_REFINE] = _Spec(
    """\
You are an expert research report rewriter. Rewrite an existing Markdown report
into a clearer, better-organized, and better-supported research report.

Goals:
1. Improve structure, expression, analytical presentation, and readability.
2. Improve evidential support, precision, credibility, and verifiability.

Important rules:
- Use only information already present in the report, supplied learnings, and
  media inventory. Do not invent facts, data, sources, or claims.
- Preserve every [[MEDIA_ANCHOR_xxx]] token exactly once.
- Keep links, source names, citations, footnote-style references, and media anchors.
- Place source support near important quantitative claims, comparisons,
  mechanism explanations, and empirical judgments.
- If a claim is only partially supported, narrow it or add a caveat.
- Return only the final rewritten Markdown.""",
    """\
Rewrite the following report into a stronger research report while preserving
all media anchors exactly once.

Topic: {topic_hint}
Media inventory: {media_inventory}
Learnings: {learnings_text}
Current report with media anchors: {report_with_anchors}""",
)

_TEMPLATES[Template.ANCHOR_REPAIR] = _Spec(
    """\
You repair Markdown reports whose media anchor tokens were lost during editing.
Insert each listed token exactly once at the position where it fits best, on its
own line. Change nothing else. Return only the full repaired Markdown.""",
    """\
Missing media anchors, each with the text that preceded it in the original draft:
{missing_anchors}

Report to repair:
{report}""",
)

_TEMPLATES[Template.JUDGE_SINGLE] = _Spec(
    """\
You are an expert evaluator of AI-generated reports with advanced knowledge of data visualization and information analysis.
Your role is to provide fair, impartial assessments of report quality based strictly on objective criteria.

## Evaluation Task
You will evaluate one AI-generated report based on:
- The overarching topic
- The report itself
- The provided visual inputs, if any

For each criterion below, assign a score from 1 to 5 (1=poor, 5=excellent) with half-point increments allowed (e.g., 3.5).
Provide a concise, evidence-based justification for each score. Be cautious with extreme scores (1 and 5).

## Additional Scoring Rules
- You must score visual dimensions primarily based on actually visible image content provided to you.
- Do not treat figure titles, captions, image placeholders, Markdown tables, Mermaid source code, or textual descriptions as equivalent to real rendered images.
- If a report does not contain real visible images, Visualization Quality should be scored conservatively and usually should not exceed 2.
- In these reports, <HTMLRenderer htmlFile="..."/> is a valid embedded-figure marker used by the report system. The corresponding rendered chart images may be provided separately in the evaluation input. Do not treat these tags by themselves as broken placeholders, missing content, or unfinished report artifacts.
- If the evaluation input already provides the corresponding real visible images, do not penalize Coherence and Organization merely because the markdown text contains <HTMLRenderer htmlFile="..."/> tags.
- When judging repetition, distinguish between harmful repetition and necessary analytical reinforcement. Briefly restating a key limitation, uncertainty, or methodological caveat in a later section should not be penalized unless it becomes near-duplicate, verbose, or materially disrupts flow.

## Mandatory Rule for Source-Figure Integration
- When scoring Source-Figure Integration, you must rely only on the images explicitly provided as source images in the evaluation input.
- Do not infer the existence of original/source images from report text alone.
- Do not treat figure titles, captions, links, citations, textual descriptions, Markdown image placeholders, Mermaid code, Mermaid renderings, generated charts, rendered screenshots, HTML screenshots, or model-generated diagrams as source/original images for this criterion.
- If no source/original images are explicitly provided in the evaluation input, Source-Figure Integration must be scored as 1.
- If the report claims to use source figures but no corresponding source/original images are actually provided, treat this as lack of visible evidence rather than successful integration.

## Evaluation Criteria
### Informativeness and Depth: Does the report deliver comprehensive, substantive and thorough information?
Score 1: Extremely superficial content with minimal information. Contains only basic facts without context or explanation.
Score 2: Limited content with some relevant information but significant gaps. Lacks necessary depth on key aspects.
Score 3: Adequate information covering main points with some supporting details, but missing opportunities for deeper analysis.
Score 4: Comprehensive information with substantive details, examples, and insights across most sections.
Score 5: Exceptionally thorough coverage with rich, nuanced details, expert-level insights, and well-contextualized information throughout.

### Coherence and Organization: Is the report well-organized with visualizations that connect meaningfully to the text?
Score 1: Disorganized; lacks logical structure and coherence. Visualizations appear random and unconnected to text.
Score 2: Basic structure is present but transitions are awkward, sections feel loosely assembled, or visuals are only weakly connected to the surrounding discussion.
Score 3: Clear overall organization with occasional flow issues, local repetition, or uneven transitions. Visualizations generally support the text, though integration or explanation could be tighter.
Score 4: Well-structured with smooth transitions between sections. Visualizations are meaningfully integrated with the text, and minor repetition or system-specific rendering markers do not materially disrupt reading.
Score 5: Impeccable organization with seamless progression of sections. Visualizations are tightly woven into the narrative, and the report maintains strong flow without unnecessary redundancy.

### Verifiability: Are the report's claims well supported with citations, references, or source annotations?
Score 1: Rarely supported with evidence; many claims are unsubstantiated.
Score 2: Inconsistently verified; some claims are supported; evidence is occasionally provided.
Score 3: Generally verified; claims are usually supported with evidence; however, there might be a few instances where verification is lacking.
Score 4: Well-supported; claims are very well supported with credible evidence, and instances of unsupported claims are rare.
Score 5: Very well-supported; almost every claim is substantiated with credible evidence, showing a high level of thorough verification.

### Visualization Quality: Is the visualization quality high? Score this mainly based on real visible image content, not chart titles, captions, placeholders, Markdown tables, Mermaid source code, or textual descriptions alone.
Score 1: No real visible images are provided, or visualization is severely missing; only placeholders, code, tables, or textual descriptions are present; or the charts are poor, confusing, misleading, badly labeled, or inappropriate.
Score 2: Visualization is extremely limited, or only a few simple or low-quality charts are provided; annotations and explanations are limited; axis, color, clarity, or layout problems clearly hinder understanding. If there are no real images and only tables or captions, the score should usually fall here.
Score 3: The charts are basically clear, have labels and annotations, and communicate information, but are not refined or miss opportunities for better expression. A score of 3 should only be given when real visible images exist and their quality is at least acceptable.
Score 4: The charts are well executed, visually effective, clearly labeled, reasonably annotated, thoughtfully designed, and the real visible images work well with the text.
Score 5: The charts are expert-level, highly polished, visually excellent, and reveal insights effectively. A score of 5 requires multiple high-quality, real visible, well-rendered images.

### Source-Figure Integration: Are the inserted original/source images (for example original paper figures, original charts, official diagrams, or source screenshots) selected appropriately, from credible sources, and effectively integrated with the text?
Score this criterion only based on the source/original images explicitly provided in the evaluation input.
Score 1: No source/original images are explicitly provided; or the provided source/original images are clearly irrelevant, unclear, low-quality, from questionable sources, or not meaningfully explained in the text.
Score 2: A small number of source/original images are provided, but their relevance is limited, their quality or source value is modest, or the text mentions them only briefly without forming meaningful support.
Score 3: The provided source/original images are basically relevant and reasonably credible, and the report offers some explanation, but the image selection or integration remains ordinary.
Score 4: The provided source/original images are well chosen, credible, and representative; the text explicitly cites and explains them, and they clearly support important points in the report.
Score 5: Multiple highly relevant, authoritative, and representative source/original images are provided; the report interprets them accurately and deeply, and they are tightly integrated into the argument in a way that substantially strengthens the report's persuasiveness.

## Response Format
Return valid XML using exactly this structure:
<evaluation>
  <report>
    <informativeness_and_depth><score>X</score><justification>...</justification></informativeness_and_depth>
    <coherence_and_organization><score>X</score><justification>...</justification></coherence_and_organization>
    <verifiability><score>X</score><justification>...</justification></verifiability>
    <visualization_quality><score>X</score><justification>...</justification></visualization_quality>
    <original_image_integration><score>X</score><justification>...</justification></original_image_integration>
  </report>
</evaluation>""",
    """\
## Topic
{topic}

<report>
{report}
</report>

The following images are original/source images inserted into the report.
{source_images}

The following images are generated charts or rendered report visuals, not original/source images.
{generated_images}""",
)

SLOT_RE = re.compile(r"\{([a-z][a-z0-9_]*)\}")


def template_slots(template: Template | str) -> set[str]:
    spec = _TEMPLATES[Template(template)]
    return set(SLOT_RE.findall(spec.system)) | set(SLOT_RE.findall(spec.user))


def _fill(text: str, slots: Mapping[str, Any]) -> str:
    return SLOT_RE.sub(lambda m: str(slots[m.group(1)]), text)


def build_prompt(
    template: Template | str,
    slots: Mapping[str, Any],
    *,
    temperature: float = 0.7,
    timeout_seconds: int = 300,
    images: tuple[ImagePayload, ...] = (),
) -> ChatRequest:
    """Fill a template's ``{slot}`` markers and wrap it in a :class:`ChatRequest`.

    Raises :class:`PromptError` (``missing slot: <name>``) if any slot the
    template uses is absent from ``slots``.
    """
    template = Template(template)
    spec = _TEMPLATES[template]
    for text in (spec.system, spec.user):
        for name in SLOT_RE.findall(text):
            if name not in slots:
                raise PromptError(f"missing slot: {name}")
    return ChatRequest(
        system=_fill(spec.system, slots),
        user=_fill(spec.user, slots),
        temperature=temperature,
        timeout_seconds=timeout_seconds,
        images=tuple(images),
        role=spec.role,
        template=template.value,
    )
