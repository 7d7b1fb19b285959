"""Media resolution and report polishing.

Charts go through a bounded actor/critic loop and are rendered by an external
process. Before the report is rewritten, every media element is swapped for an
opaque ``[[MEDIA_ANCHOR_nnn]]`` token, so the rewrite cannot lose or duplicate
figures; the tokens are checked and swapped back afterwards.
"""

from __future__ import annotations

import json
import logging
import re
import subprocess
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Protocol, Sequence
from urllib.parse import urlsplit

from .enrichment import PlanningBrief
from .evidence import PLACEHOLDER_RE, ImageCandidate
from .gateway import GatewayError, Template, build_prompt
from .llmtext import parse_json_block
from .writer import SectionDraft

logger = logging.getLogger(__name__)

D3_URL = "https://d3js.org/d3.v7.min.js"
REPORT_CHAR_LIMIT = 90_000
LEARNINGS_CHAR_LIMIT = 45_000
MAX_CHART_ITERATIONS = 3
MAX_REPAIR_ATTEMPTS = 2
NO_ISSUES = "no issues found."

PENDING_RE = re.compile(r"\[\[CHART_PENDING:([A-Za-z0-9_]+)\]\]")
ANCHOR_RE = re.compile(r"\[\[MEDIA_ANCHOR_(\d{3,})\]\]")
_OPEN_RE = re.compile(r"<visualization>", re.IGNORECASE)
_CLOSE_RE = re.compile(r"</visualization>", re.IGNORECASE)
_DUMMY_VALUES = {"alpha", "beta", "series a", "series b", "category a", "category b"}
_DUMMY_PHRASES = ("sample bar chart", "dummy", "fake data", "lorem ipsum", "placeholder data", "sample data")


# ---------------------------------------------------------------------------
# Visualization specs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VisualizationSpec:
    section_index: int
    spec_json: str
    id: str

    @property
    def title(self) -> str:
        try:
            data = json.loads(self.spec_json)
        except ValueError:
            return ""
        if isinstance(data, dict):
            for key in ("title", "chart_title", "name"):
                if isinstance(data.get(key), str):
                    return data[key]
        return ""


def _strings(value) -> list[str]:
    if isinstance(value, str):
        return [value]
    if isinstance(value, dict):
        return [s for k, v in value.items() for s in _strings(k) + _strings(v)]
    if isinstance(value, list):
        return [s for v in value for s in _strings(v)]
    return []


def has_dummy_data(data) -> bool:
    for s in _strings(data):
        low = s.strip().lower()
        if low in _DUMMY_VALUES or any(p in low for p in _DUMMY_PHRASES):
            return True
    return False


def _parse_spec(body: str):
    try:
        data = parse_json_block(body)
    except ValueError:
        return None
    if not isinstance(data, (dict, list)) or not data:
        return None
    return data


def _unterminated_end(text: str, start: int) -> int:
    """End of an unclosed block: its JSON payload if decodable, else the next blank line."""
    body_start = start + len("<visualization>")
    decoder = json.JSONDecoder()
    rest = text[body_start:]
    stripped = rest.lstrip()
    offset = body_start + len(rest) - len(stripped)
    if stripped[:1] in ("{", "["):
        try:
            _, end = decoder.raw_decode(text, offset)
            return end
        except json.JSONDecodeError:
            pass
    blank = re.search(r"\n[ \t]*\n", text[body_start:])
    return body_start + blank.start() if blank else len(text)


def extract_from_markdown(markdown: str, section_index: int) -> tuple[str, list[VisualizationSpec]]:
    out: list[str] = []
    specs: list[VisualizationSpec] = []
    pos = 0
    while True:
        m = _OPEN_RE.search(markdown, pos)
        if m is None:
            out.append(markdown[pos:])
            break
        out.append(markdown[pos : m.start()])
        close = _CLOSE_RE.search(markdown, m.end())
        reopen = _OPEN_RE.search(markdown, m.end())
        if close is None or (reopen is not None and reopen.start() < close.start()):
            logger.warning("section %d: dropping unterminated <visualization> block", section_index)
            pos = _unterminated_end(markdown, m.start())
            continue
        data = _parse_spec(markdown[m.end() : close.start()])
        pos = close.end()
        if data is None:
            logger.warning("section %d: dropping <visualization> block without valid JSON", section_index)
            continue
        if has_dummy_data(data):
            logger.warning("section %d: dropping <visualization> block with dummy data", section_index)
            continue
        spec = VisualizationSpec(section_index, json.dumps(data, ensure_ascii=False, indent=1), f"viz_{section_index}_{len(specs) + 1}")
        specs.append(spec)
        out.append(f"[[CHART_PENDING:{spec.id}]]")
    return "".join(out), specs


def extract_visualizations(drafts: Sequence[SectionDraft]) -> tuple[list[SectionDraft], list[VisualizationSpec]]:
    """Swap closed ``<visualization>`` blocks for pending-chart markers; drop broken ones."""
    new_drafts, specs = [], []
    for d in drafts:
        markdown, found = extract_from_markdown(d.markdown, d.section_index)
        specs.extend(found)
        new_drafts.append(
            SectionDraft(d.section_index, markdown, d.used_image_ids, tuple(s.spec_json for s in found), d.prompt)
        )
    return new_drafts, specs


# ---------------------------------------------------------------------------
# Chart loop
# ---------------------------------------------------------------------------

_MONTHS = {
    "jan": 1, "january": 1, "feb": 2, "february": 2, "mar": 3, "march": 3, "apr": 4, "april": 4,
    "may": 5, "jun": 6, "june": 6, "jul": 7, "july": 7, "aug": 8, "august": 8, "sep": 9, "sept": 9,
    "september": 9, "oct": 10, "october": 10, "nov": 11, "november": 11, "dec": 12, "december": 12,
}  # fmt: skip
_MONTH_RE = re.compile(r"(?<![a-z])(" + "|".join(sorted(_MONTHS, key=len, reverse=True)) + r")(?![a-z])", re.IGNORECASE)


def detect_template_chart(html: str) -> bool:
    """True for charts that look like a stock template rather than real data."""
    low = html.lower()
    if "monthly performance" in low or "sample data" in low:
        return True
    return len({_MONTHS[m.lower()] for m in _MONTH_RE.findall(html)}) >= 4


def chart_contract_problems(html: str) -> list[str]:
    problems = []
    if D3_URL not in html:
        problems.append(f"the page does not load {D3_URL}")
    if not re.search(r"(?<![0-9])700(?:px)?(?![0-9])", html):
        problems.append("the root container is not 700px wide")
    return problems


def extract_html(text: str) -> str | None:
    m = re.search(r"```html\s*\n(.*?)```", text, re.DOTALL | re.IGNORECASE)
    if m:
        return m.group(1).strip() + "\n"
    m = re.search(r"(<!DOCTYPE html.*?</html>|<html.*?</html>)", text, re.DOTALL | re.IGNORECASE)
    return m.group(1).strip() + "\n" if m else None


class RendererError(RuntimeError):
    pass


class Renderer(Protocol):
    def render(self, html_path: Path, png_path: Path) -> str:
        """Render ``html_path`` to ``png_path``; return captured console text."""


class SubprocessRenderer:
    """Runs a headless-browser script as ``<command> in.html out.png``."""

    def __init__(self, command: Sequence[str] | None = None, timeout: float = 120.0):
        self.command = list(command) if command else [sys.executable, "-m", "figreport.render"]
        self.timeout = timeout

    def render(self, html_path: Path, png_path: Path) -> str:
        try:
            proc = subprocess.run(
                [*self.command, str(html_path), str(png_path)],
                capture_output=True,
                text=True,
                timeout=self.timeout,
                check=False,
            )
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise RendererError(f"renderer failed to run: {exc}") from exc
        if proc.returncode != 0 or not png_path.exists():
            raise RendererError(f"renderer exited with {proc.returncode}: {proc.stderr.strip()[:300]}")
        return proc.stdout


@dataclass
class ChartArtifact:
    spec_id: str
    html: str
    render_png: bytes
    iterations_used: int
    critic_log: list[str] = field(default_factory=list)
    forced_regenerations: int = 0
    html_path: str = ""
    png_path: str = ""
    title: str = ""


def is_clean_critique(critique: str) -> bool:
    return critique.strip().lower().rstrip(".").endswith(NO_ISSUES.rstrip("."))


def _critique(spec: VisualizationSpec, png: bytes, console: str, gateway) -> str:
    request = build_prompt(
        Template.CHART_CRITIC, {"spec_json": spec.spec_json, "console": console.strip() or "(none)"}, images=(png,)
    )
    try:
        return gateway.chat(request).strip()
    except GatewayError as exc:
        logger.warning("chart critic failed for %s: %s", spec.id, exc)
        return NO_ISSUES  # nothing actionable; accept the render


def _compare(spec: VisualizationSpec, a: bytes, b: bytes, gateway) -> int:
    """Index (0 = a, 1 = b) of the better candidate; ties and failures favour b."""
    request = build_prompt(Template.CHART_COMPARE, {"spec_json": spec.spec_json}, images=(a, b))
    try:
        answer = gateway.chat(request).strip().upper()
    except GatewayError as exc:
        logger.warning("chart comparison failed for %s: %s", spec.id, exc)
        return 1
    m = re.search(r"\b([AB])\b", answer)
    return 0 if m and m.group(1) == "A" else 1


def refine_chart(
    spec: VisualizationSpec,
    style_guide: str,
    gateway,
    renderer: Renderer,
    out_dir: str | Path,
    index: int,
    max_iterations: int = MAX_CHART_ITERATIONS,
) -> ChartArtifact | None:
    """Actor writes HTML, critic reviews the render; at most ``max_iterations`` actor calls.

    Returns None (chart dropped) when the renderer fails or no usable HTML
    was produced.
    """
    out_dir = Path(out_dir)
    log: list[str] = []
    candidates: list[tuple[str, bytes]] = []
    feedback: str | None = None
    previous: str | None = None
    forced = 0
    accepted = False
    iterations = 0
    with tempfile.TemporaryDirectory(prefix="chart_") as tmp:
        while iterations < max_iterations:
            iterations += 1
            if feedback is None or previous is None:
                request = build_prompt(Template.CHART_ACTOR, {"spec_json": spec.spec_json, "style_guide": style_guide})
            else:
                request = build_prompt(
                    Template.CHART_REVISE,
                    {"feedback": feedback, "spec_json": spec.spec_json, "style_guide": style_guide, "previous_html": previous},
                )
            try:
                html = extract_html(gateway.chat(request))
            except GatewayError as exc:
                log.append(f"iteration {iterations}: actor failed: {exc}")
                continue
            if html is None:
                log.append(f"iteration {iterations}: actor returned no HTML")
                continue
            if detect_template_chart(html):
                forced += 1
                log.append(f"iteration {iterations}: template chart detected, forcing regeneration")
                feedback = (
                    "The chart looks like a generic template (placeholder or calendar data). "
                    "Rebuild it strictly from the data in the design specification."
                )
                previous = html
                continue
            html_path, png_path = Path(tmp) / f"iter_{iterations}.html", Path(tmp) / f"iter_{iterations}.png"
            html_path.write_text(html, encoding="utf-8")
            try:
                console = renderer.render(html_path, png_path)
            except RendererError as exc:
                logger.warning("dropping chart %s: %s", spec.id, exc)
                return None
            problems = chart_contract_problems(html)
            if problems:
                console = (console + "\n" if console else "") + "\n".join(f"contract: {p}" for p in problems)
            png = png_path.read_bytes()
            candidates.append((html, png))
            critique = _critique(spec, png, console, gateway)
            log.append(f"iteration {iterations}: {critique}")
            if is_clean_critique(critique):
                accepted = True
                break
            feedback, previous = critique, html

    if not candidates:
        logger.warning("dropping chart %s: no usable implementation after %d iterations", spec.id, iterations)
        return None
    if accepted or len(candidates) == 1:
        html, png = candidates[-1]
    else:
        (a_html, a_png), (b_html, b_png) = candidates[-2], candidates[-1]
        html, png = (a_html, a_png) if _compare(spec, a_png, b_png, gateway) == 0 else (b_html, b_png)

    out_dir.mkdir(parents=True, exist_ok=True)
    html_name, png_name = f"chart_{index}.html", f"chart_{index}.png"
    (out_dir / html_name).write_text(html, encoding="utf-8")
    (out_dir / png_name).write_bytes(png)
    return ChartArtifact(
        spec_id=spec.id,
        html=html,
        render_png=png,
        iterations_used=iterations,
        critic_log=log,
        forced_regenerations=forced,
        html_path=f"{out_dir.name}/{html_name}",
        png_path=f"{out_dir.name}/{png_name}",
        title=spec.title or f"Chart {index}",
    )


def build_charts(
    specs: Sequence[VisualizationSpec],
    style_guide: str,
    gateway,
    renderer: Renderer,
    out_dir: str | Path,
    max_workers: int = 4,
) -> dict[str, ChartArtifact]:
    """Refine all specs (independently, possibly in parallel); keyed by spec ID."""
    jobs = list(enumerate(specs, start=1))
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        results = list(pool.map(lambda job: refine_chart(job[1], style_guide, gateway, renderer, out_dir, job[0]), jobs))
    return {spec.id: art for (_, spec), art in zip(jobs, results) if art is not None}


# ---------------------------------------------------------------------------
# Media resolution
# ---------------------------------------------------------------------------


def _clean_inline(text: str) -> str:
    return re.sub(r"\s+", " ", text.replace("[", "(").replace("]", ")").replace("*", "")).strip()


def figure_title(c: ImageCandidate, fallback: str = "") -> str:
    title = (c.ocr.visible_title if c.ocr else "") or c.alt_text or fallback or "Source figure"
    return _clean_inline(title)


def figure_caption(n: int, c: ImageCandidate, title: str) -> str:
    parts = [f"Figure {n}: {title.rstrip('.')}."]
    landmarks = [a.visual_features for a in c.atoms[:2]] or list(c.ocr.keywords[:3] if c.ocr else ())
    if landmarks:
        parts.append("Visible: " + "; ".join(_clean_inline(x) for x in landmarks) + ".")
    page = c.page_url or c.url
    host = urlsplit(page).hostname or page
    parts.append(f"Source: [{host}]({page})")
    return "*" + " ".join(parts) + "*"


def chart_block(chart: ChartArtifact, n: int) -> str:
    title = _clean_inline(chart.title)
    return (
        f"<!-- chart:{chart.spec_id} -->\n"
        f"![{title}]({chart.png_path})\n"
        f"[Interactive chart]({chart.html_path})\n"
        f"*Figure {n}: {title}. Generated from data extracted during research.*\n"
        f"<!-- /chart -->"
    )


def resolve_media(
    report: str, briefs: Sequence[PlanningBrief] | Mapping[str, ImageCandidate], charts: Mapping[str, ChartArtifact]
) -> str:
    """Turn ``[Image_X]`` placeholders and pending-chart markers into final media markup.

    Each media element becomes its own paragraph right after the line that
    referenced it. Unknown markers are removed.
    """
    if isinstance(briefs, Mapping):
        cands = dict(briefs)
    else:
        cands = {b.image_id: b.candidate for b in briefs}
    counter = 0
    out: list[str] = []
    for line in report.split("\n"):
        blocks: list[str] = []

        def image(m: re.Match) -> str:
            nonlocal counter
            c = cands.get(m.group(1))
            if c is None:
                return ""
            counter += 1
            title = figure_title(c, m.group(2) or "")
            blocks.append(f"![{title}]({c.url})\n{figure_caption(counter, c, title)}")
            return ""

        def chart(m: re.Match) -> str:
            nonlocal counter
            art = charts.get(m.group(1))
            if art is None:
                return ""
            counter += 1
            blocks.append(chart_block(art, counter))
            return ""

        pattern = re.compile(f"{PLACEHOLDER_RE.pattern}|{PENDING_RE.pattern}")

        def either(m: re.Match) -> str:
            if m.group(0).startswith("[[CHART_PENDING"):
                return chart(PENDING_RE.match(m.group(0)))
            return image(PLACEHOLDER_RE.match(m.group(0)))

        new = pattern.sub(either, line) if ("[Image_" in line or "[[CHART_PENDING" in line) else line
        if new != line:
            new = re.sub(r"[ \t]{2,}", " ", new).rstrip()
            new = re.sub(r"\s+([.,;:])", r"\1", new)
        if new == line or new.strip():
            out.append(new)
        for b in blocks:
            if out and out[-1].strip():
                out.append("")
            out.append(b)
            out.append("")
    text = "\n".join(out)
    return re.sub(r"\n{3,}", "\n\n", text) if text != report else text


# ---------------------------------------------------------------------------
# Anchors
# ---------------------------------------------------------------------------

MEDIA_RE = re.compile(
    r"<!-- chart:[^\n]*?-->.*?<!-- /chart -->"
    r"|!\[[^\]\n]*\]\([^)\n]*\)(?:\n\*Figure [^\n]*\*(?=\n|$))?"
    r"|<img\b[^>]*>",
    re.DOTALL,
)


@dataclass
class MediaAnchorMap:
    entries: dict[str, str] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    def tokens(self) -> list[str]:
        return list(self.entries)


def anchor_token(n: int) -> str:
    return f"[[MEDIA_ANCHOR_{n:03d}]]"


def anchorize(report: str) -> tuple[str, MediaAnchorMap]:
    """Replace each media element with a sequential anchor token."""
    if ANCHOR_RE.search(report):
        raise ValueError("report already contains media anchor tokens")
    entries: dict[str, str] = {}

    def swap(m: re.Match) -> str:
        token = anchor_token(len(entries) + 1)
        entries[token] = m.group(0)
        return token

    return MEDIA_RE.sub(swap, report), MediaAnchorMap(entries)


def deanchorize(text: str, amap: MediaAnchorMap) -> str:
    return ANCHOR_RE.sub(lambda m: amap.entries.get(m.group(0), m.group(0)), text)


def media_inventory(amap: MediaAnchorMap) -> str:
    if not amap:
        return "none"
    lines = []
    for token, markup in amap.entries.items():
        kind = "generated chart" if markup.startswith("<!-- chart:") else "source figure"
        alt = re.search(r"!\[([^\]]*)\]", markup)
        lines.append(f"{token}: {kind}: {alt.group(1) if alt else 'image'}")
    return "\n".join(lines)


_SCAFFOLD_RES = [
    re.compile(r"^\s*(here is|here's|below is|sure[,!]?)\b.*\breport\b.*:\s*$", re.IGNORECASE),
    re.compile(r"^\s*</?(report|rewritten_report|refined_report|markdown)>\s*$", re.IGNORECASE),
    re.compile(r"^\s*\[(rewritten|refined) report( here)?\]\s*$", re.IGNORECASE),
    re.compile(r"^\s*(let me know|i hope this)\b.*$", re.IGNORECASE),
    re.compile(r"^\s*(editor'?s note|note to editor|todo)\s*:.*$", re.IGNORECASE),
]
_NUMBERED_HEADING_RE = re.compile(r"^(#{2,6})\s+(\d+(?:\.\d+)*)\.?(?:\s+(.*?))?\s*$")


def strip_scaffolding(text: str) -> str:
    text = text.strip()
    fenced = re.match(r"^```(?:markdown|md)?\s*\n(.*)\n```$", text, re.DOTALL)
    if fenced:
        text = fenced.group(1)
    lines = [line for line in text.split("\n") if not any(r.match(line) for r in _SCAFFOLD_RES)]
    return re.sub(r"\n{3,}", "\n\n", "\n".join(lines)).strip() + "\n"


def renumber_headings(text: str) -> str:
    """Make numbered ``##``-and-deeper headings consecutive and hierarchical from 1."""
    counters = [0] * 5
    out = []
    in_fence = False
    for line in text.split("\n"):
        if line.lstrip().startswith("```"):
            in_fence = not in_fence
        m = None if in_fence else _NUMBERED_HEADING_RE.match(line)
        if not m:
            out.append(line)
            continue
        hashes, _, title = m.groups()
        depth = len(hashes) - 1
        for i in range(depth - 1):
            counters[i] = max(counters[i], 1)
        counters[depth - 1] += 1
        for i in range(depth, len(counters)):
            counters[i] = 0
        number = ".".join(str(c) for c in counters[:depth])
        number = f"{number}." if depth == 1 else number
        out.append(f"{hashes} {number} {title or ''}".rstrip())
    return "\n".join(out)


def refine_report(anchored: str, learnings: str, inventory: str, topic: str, gateway) -> str:
    """Rewrite the anchored report; the anchored input passes through on failure."""
    request = build_prompt(
        Template.REPORT_REFINE,
        {
            "topic_hint": topic,
            "media_inventory": inventory,
            "learnings_text": learnings[:LEARNINGS_CHAR_LIMIT],
            "report_with_anchors": anchored[:REPORT_CHAR_LIMIT],
        },
    )
    try:
        refined = gateway.chat(request)
    except GatewayError as exc:
        logger.warning("report refinement failed, keeping the draft: %s", exc)
        return anchored
    if not refined.strip():
        logger.warning("report refinement returned nothing, keeping the draft")
        return anchored
    return renumber_headings(strip_scaffolding(refined))


def _dedupe_anchors(text: str, amap: MediaAnchorMap) -> str:
    seen: set[str] = set()
    lines = []
    for line in text.split("\n"):
        def fix(m: re.Match) -> str:
            token = m.group(0)
            if token not in amap.entries or token in seen:
                return ""
            seen.add(token)
            return token

        new = ANCHOR_RE.sub(fix, line)
        if new != line and not new.strip():
            continue
        lines.append(new)
    return "\n".join(lines)


def _present(text: str, amap: MediaAnchorMap) -> list[str]:
    found = {m.group(0) for m in ANCHOR_RE.finditer(text)}
    return [t for t in amap.entries if t in found]


def _context_before(anchored: str, token: str, width: int = 200) -> str:
    i = anchored.find(token)
    if i < 0:
        return ""
    before = ANCHOR_RE.sub("", anchored[max(0, i - width) : i])
    return re.sub(r"\s+", " ", before).strip()


def validate_anchors(
    refined: str,
    amap: MediaAnchorMap,
    gateway=None,
    original: str = "",
    max_repairs: int = MAX_REPAIR_ATTEMPTS,
) -> str:
    """Ensure each anchor appears exactly once, then restore the original media.

    Unknown tokens and repeats are removed. Missing anchors get up to
    ``max_repairs`` targeted repair prompts; whatever is still missing is
    appended under an "Additional Figures" heading.
    """
    text = _dedupe_anchors(refined, amap)
    for attempt in range(1, max_repairs + 1):
        present = _present(text, amap)
        missing = [t for t in amap.entries if t not in present]
        if not missing or gateway is None:
            break
        listing = "\n".join(f"{t} (after: \"{_context_before(original, t)}\")" for t in missing)
        request = build_prompt(Template.ANCHOR_REPAIR, {"missing_anchors": listing, "report": text})
        try:
            repaired = _dedupe_anchors(strip_scaffolding(gateway.chat(request)), amap)
        except GatewayError as exc:
            logger.warning("anchor repair attempt %d failed: %s", attempt, exc)
            continue
        if not set(present) <= set(_present(repaired, amap)):
            logger.warning("anchor repair attempt %d lost existing anchors, discarded", attempt)
            continue
        text = repaired
    missing = [t for t in amap.entries if t not in _present(text, amap)]
    if missing:
        logger.warning("re-appending %d media elements lost during refinement", len(missing))
        text = (
            text.rstrip()
            + "\n\n## Additional Figures\n\n_Media that could not be placed during editing._\n\n"
            + "\n\n".join(missing)
            + "\n"
        )
    return deanchorize(text, amap)


# ---------------------------------------------------------------------------
# References
# ---------------------------------------------------------------------------

_MD_LINK_RE = re.compile(r"(!?)\[([^\]\n]*)\]\((https?://[^)\s]+)\)")
_BARE_URL_RE = re.compile(r"https?://[^\s<>()\[\]\"'`]+")
_ARXIV_ID_RE = re.compile(r"arxiv:\s*(\d{4}\.\d{4,5})(?:v\d+)?", re.IGNORECASE)
_ARXIV_URL_RE = re.compile(r"arxiv\.org/(?:abs|pdf)/(\d{4}\.\d{4,5})", re.IGNORECASE)
_IMAGE_EXT = (".png", ".jpg", ".jpeg", ".gif", ".svg", ".webp", ".bmp")


def _collect(text: str, refs: dict[str, tuple[str, str]]) -> None:
    def add(url: str, label: str) -> None:
        url = url.rstrip(".,;:")
        if urlsplit(url).path.lower().endswith(_IMAGE_EXT):
            return
        arxiv = _ARXIV_URL_RE.search(url)
        key = f"arxiv:{arxiv.group(1)}" if arxiv else url
        if key not in refs:
            refs[key] = (label, url)
        elif not refs[key][0] and label:
            refs[key] = (label, refs[key][1])

    linked_spans = []
    for m in _MD_LINK_RE.finditer(text):
        linked_spans.append(m.span())
        if not m.group(1):
            add(m.group(3), m.group(2).strip())
    for m in _BARE_URL_RE.finditer(text):
        if any(a <= m.start() < b for a, b in linked_spans):
            continue
        add(m.group(0), "")
    for m in _ARXIV_ID_RE.finditer(text):
        key = f"arxiv:{m.group(1)}"
        refs.setdefault(key, (f"arXiv:{m.group(1)}", f"https://arxiv.org/abs/{m.group(1)}"))


def extract_references(report: str, learnings: str) -> str:
    """A numbered "References" section of every distinct link and arXiv ID, or ``""``."""
    refs: dict[str, tuple[str, str]] = {}
    _collect(report, refs)
    _collect(learnings, refs)
    if not refs:
        return ""
    lines = ["## References", ""]
    for n, (label, url) in enumerate(refs.values(), start=1):
        label = _clean_inline(label) or urlsplit(url).hostname or url
        lines.append(f"{n}. [{label}]({url})")
    return "\n".join(lines) + "\n"

