from __future__ import annotations

from pathlib import Path

import pytest

from fakeworld import FakeRenderer, World
from figreport.enrichment import PlanningBrief
from figreport.evidence import EvidenceAtom, ImageCandidate, Learning, OcrResult

FIXTURES = Path(__file__).parent / "fixtures"


def atom(features: str = "red arrow into the pruner", fact: str = "tokens drop", why: str = "explains speed", image_id=None):
    return EvidenceAtom(features, fact, why, image_id)


def candidate(n: int = 1, **kw) -> ImageCandidate:
    fields = dict(
        id=f"Image_{n}",
        url=f"https://host{n}.example.com/fig/{n}.png",
        page_url=f"https://host{n}.example.com/post/{n}",
        alt_text="architecture diagram of the encoder",
        file_size_bytes=100_000,
        content_type="image/png",
    )
    fields.update(kw)
    return ImageCandidate(**fields)


def analyzed(n: int = 1, **kw) -> ImageCandidate:
    base = dict(
        figure_type="architecture",
        credibility=0.8,
        relevance=4.0,
        evidence_role="shows where token pruning happens in the encoder",
        ocr=OcrResult("Encoder with pruning", "Block 1, Pruner", ("encoder", "pruning", "attention"), "diagram"),
        atoms=(atom(image_id=f"Image_{n}"),),
    )
    base.update(kw)
    return candidate(n, **base)


def brief(c: ImageCandidate, section: str = "unassigned", score: float = 4.0) -> PlanningBrief:
    return PlanningBrief(c.id, c.figure_type or "other", c.atoms, section, "introduce it first", score, c)


def learning(lid: int, text: str = "", url: str = "", **kw) -> Learning:
    return Learning(lid, text or f"fact number {lid} about pruning", url or f"https://src{lid}.example.org/a", **kw)


@pytest.fixture
def world() -> World:
    return World()


@pytest.fixture
def renderer() -> FakeRenderer:
    return FakeRenderer()


ROOT = FIXTURES.parent.parent
TRANSCRIPT = FIXTURES / "transcript.json"


def replay_run(out_dir: Path, **ablations) -> Path:
    """Run the whole pipeline against the recorded transcript."""
    from fakeworld import TOPIC
    from figreport.config import Ablations, RunConfig
    from figreport.pipeline import run

    cfg = RunConfig(
        topic=TOPIC,
        output_dir=out_dir,
        cache=False,
        mock_transcript=TRANSCRIPT,
        ablations=Ablations(**ablations),
    )
    return run(cfg, renderer=FakeRenderer())
