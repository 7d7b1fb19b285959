"""Rubric-based report judging, score aggregation and repeat-run stability."""

from __future__ import annotations

import csv
import json
import logging
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path
from statistics import fmean, pstdev
from typing import Mapping, Sequence

from .gateway import GatewayError, Template, build_prompt

logger = logging.getLogger(__name__)

DIMENSIONS = ("informativeness", "coherence", "verifiability", "visualization_quality", "source_figure_integration")
XML_TAGS = {
    "informativeness": "informativeness_and_depth",
    "coherence": "coherence_and_organization",
    "verifiability": "verifiability",
    "visualization_quality": "visualization_quality",
    "source_figure_integration": "original_image_integration",
}
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".webp", ".gif")


class JudgeParseError(ValueError):
    pass


class JudgeError(RuntimeError):
    """The judge produced no valid evaluation after its retry."""


def on_grid(score: float) -> bool:
    doubled = score * 2
    return abs(doubled - round(doubled)) < 1e-9 and 2 <= round(doubled) <= 10


@dataclass(frozen=True)
class DimensionScores:
    informativeness: float
    coherence: float
    verifiability: float
    visualization_quality: float
    source_figure_integration: float
    justifications: Mapping[str, str] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        for name in DIMENSIONS:
            value = getattr(self, name)
            if not on_grid(value):
                raise ValueError(f"{name}={value} is not on the 0.5 grid within [1, 5]")

    def values(self) -> tuple[float, ...]:
        return tuple(getattr(self, d) for d in DIMENSIONS)

    @property
    def overall(self) -> float:
        return aggregate(self)


def aggregate(scores: DimensionScores | Sequence[float]) -> float:
    """Mean of the five dimension scores, rounded to 2 decimals."""
    values = scores.values() if isinstance(scores, DimensionScores) else tuple(scores)
    if len(values) != len(DIMENSIONS):
        raise ValueError(f"expected {len(DIMENSIONS)} scores, got {len(values)}")
    return round(fmean(values), 2)


_BARE_AMP_RE = re.compile(r"&(?!(?:[A-Za-z]+|#\d+|#x[0-9A-Fa-f]+);)")


def parse_evaluation(text: str) -> DimensionScores:
    m = re.search(r"<evaluation>.*?</evaluation>", text, re.DOTALL)
    if m is None:
        raise JudgeParseError("no <evaluation> element in judge output")
    try:
        root = ET.fromstring(_BARE_AMP_RE.sub("&amp;", m.group(0)))
    except ET.ParseError as exc:
        raise JudgeParseError(f"invalid XML: {exc}") from exc
    values: dict[str, float] = {}
    notes: dict[str, str] = {}
    for name, tag in XML_TAGS.items():
        node = root.find(f".//{tag}")
        score = node.find("score") if node is not None else None
        if score is None or score.text is None:
            raise JudgeParseError(f"missing score for {tag}")
        try:
            value = float(score.text.strip())
        except ValueError as exc:
            raise JudgeParseError(f"non-numeric score for {tag}: {score.text!r}") from exc
        if not on_grid(value):
            raise JudgeParseError(f"off-grid score for {tag}: {value}")
        values[name] = value
        notes[name] = (node.findtext("justification") or "").strip()
    return DimensionScores(**values, justifications=notes)


def _image_listing(images: Sequence, label: str) -> str:
    if not images:
        return "None provided."
    return "\n".join(f"[{label} {i}] attached" for i in range(1, len(images) + 1))


def evaluate_report(
    topic: str, report: str, source_images: Sequence, generated_images: Sequence, gateway, attempts: int = 2
) -> DimensionScores:
    """Score one report; one retry on invalid or off-grid output.

    With no source images the source-figure score is forced to 1.
    """
    request = build_prompt(
        Template.JUDGE_SINGLE,
        {
            "topic": topic,
            "report": report,
            "source_images": _image_listing(source_images, "Source image"),
            "generated_images": _image_listing(generated_images, "Generated image"),
        },
        images=tuple(source_images) + tuple(generated_images),
    )
    last: Exception | None = None
    for attempt in range(1, attempts + 1):
        try:
            scores = parse_evaluation(gateway.chat(request))
        except (JudgeParseError, GatewayError) as exc:
            logger.warning("judge attempt %d rejected: %s", attempt, exc)
            last = exc
            continue
        if not source_images and scores.source_figure_integration != 1.0:
            notes = dict(scores.justifications)
            notes["source_figure_integration"] = "No source images were provided; score fixed at 1."
            scores = DimensionScores(*scores.values()[:4], 1.0, justifications=notes)
        return scores
    raise JudgeError(f"judge failed after {attempts} attempts: {last}")


@dataclass(frozen=True)
class DimensionStability:
    within_half_pct: float
    mean_range: float
    mean_std: float


def stability_metrics(runs: Sequence[Mapping[str, DimensionScores]]) -> dict[str, DimensionStability]:
    """Agreement across k repeated judging runs, per dimension plus ``overall``.

    ``runs[i][report]`` is the score of ``report`` in run ``i``. Standard
    deviation uses the population form.
    """
    if len(runs) < 2:
        raise ValueError("stability needs at least 2 runs")
    reports = set(runs[0])
    if not reports:
        raise ValueError("no reports to compare")
    for run in runs[1:]:
        if set(run) != reports:
            raise ValueError("every run must score the same set of reports")
    out: dict[str, DimensionStability] = {}
    for dim in (*DIMENSIONS, "overall"):
        ranges, stds, within = [], [], 0
        for report in sorted(reports):
            series = [run[report].overall if dim == "overall" else getattr(run[report], dim) for run in runs]
            spread = max(series) - min(series)
            ranges.append(spread)
            stds.append(pstdev(series))
            within += spread <= 0.5 + 1e-9
        out[dim] = DimensionStability(100.0 * within / len(reports), fmean(ranges), fmean(stds))
    return out


# ---------------------------------------------------------------------------
# Bundle directories
# ---------------------------------------------------------------------------


@dataclass
class Bundle:
    name: str
    topic: str
    report: str
    source_images: list[bytes]
    generated_images: list[bytes]


def _images(directory: Path) -> list[bytes]:
    if not directory.is_dir():
        return []
    return [p.read_bytes() for p in sorted(directory.iterdir()) if p.suffix.lower() in IMAGE_SUFFIXES]


def load_bundle(path: Path) -> Bundle:
    report = path / "report.md"
    if not report.is_file():
        raise ValueError(f"{path.name}: missing report.md")
    topic_file = path / "topic.txt"
    topic = topic_file.read_text(encoding="utf-8").strip() if topic_file.is_file() else path.name
    return Bundle(
        path.name,
        topic,
        report.read_text(encoding="utf-8"),
        _images(path / "source_images"),
        _images(path / "generated_images"),
    )


def judge_bundles(bundle_dir: str | Path, gateway, runs: int = 1, out_dir: str | Path | None = None) -> Path:
    """Judge every bundle ``runs`` times; writes ``scores.csv`` (and ``stability.json`` when runs > 1)."""
    bundle_dir = Path(bundle_dir)
    out_dir = Path(out_dir) if out_dir else bundle_dir
    if runs < 1:
        raise ValueError("runs must be >= 1")
    paths = sorted(p for p in bundle_dir.iterdir() if p.is_dir()) if bundle_dir.is_dir() else []
    if not paths:
        raise ValueError(f"no report bundles in {bundle_dir}")

    bundles, skipped = [], []
    for p in paths:
        try:
            bundles.append(load_bundle(p))
        except ValueError as exc:
            logger.warning("skipping bundle: %s", exc)
            skipped.append(p.name)

    results: list[dict[str, DimensionScores]] = [{} for _ in range(runs)]
    rows = []
    for bundle in bundles:
        for k in range(runs):
            try:
                scores = evaluate_report(
                    bundle.topic, bundle.report, bundle.source_images, bundle.generated_images, gateway
                )
            except JudgeError as exc:
                logger.warning("%s run %d: %s", bundle.name, k + 1, exc)
                rows.append({"report": bundle.name, "run": k + 1, "status": "failed"})
                continue
            results[k][bundle.name] = scores
            rows.append(
                {
                    "report": bundle.name,
                    "run": k + 1,
                    **dict(zip(DIMENSIONS, scores.values())),
                    "overall": f"{scores.overall:.2f}",
                    "status": "ok",
                }
            )

    out_dir.mkdir(parents=True, exist_ok=True)
    scores_path = out_dir / "scores.csv"
    with scores_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["report", "run", *DIMENSIONS, "overall", "status"])
        writer.writeheader()
        writer.writerows(rows)

    if runs > 1:
        complete = set.intersection(*(set(r) for r in results))
        payload: dict = {"runs": runs, "reports": sorted(complete), "skipped": skipped}
        if complete:
            metrics = stability_metrics([{n: r[n] for n in complete} for r in results])
            payload["metrics"] = {
                dim: {"within_half_pct": m.within_half_pct, "mean_range": m.mean_range, "mean_std": m.mean_std}
                for dim, m in metrics.items()
            }
        (out_dir / "stability.json").write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    if skipped:
        logger.warning("skipped %d malformed bundle(s): %s", len(skipped), ", ".join(skipped))
    return scores_path
