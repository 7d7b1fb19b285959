import json
import logging
import math

import pytest

from conftest import analyzed, candidate, learning
from fakeworld import SyntheticFunnel
from figreport.enrichment import (
    STAGES,
    FunnelCaps,
    classify_context,
    context_stage,
    final_select,
    heuristic_prune,
    match_section,
    metadata_only_selection,
    parse_visual_analysis,
    rerank_by_topic,
    run_enrichment,
    visual_analyze,
)
from figreport.evidence import UNASSIGNED, EvidencePool, parse_outline
from figreport.gateway import MockGateway

TOPIC = "chart evidence"
OUTLINE = parse_outline("# 1. Background\na. x <citation>id 1</citation>\n# 2. Results\na. y <citation>id 1</citation>")


def pool_of(n, **kw):
    pool = EvidencePool()
    pool.add_learning(learning(1))
    for i in range(1, n + 1):
        pool.add_image(candidate(i, alt_text=f"result chart {i}", **kw))
    return pool


def funnel_gateway(model=None):
    model = model or SyntheticFunnel()
    return MockGateway(responders={"*": model}), model


# -- stage 1 ---------------------------------------------------------------------------------


def test_logo_without_technical_signal_dropped():
    assert not heuristic_prune(candidate(1, alt_text="company logo", url="https://x.org/a.png")).keep


def test_technical_signal_overrides():
    assert heuristic_prune(candidate(1, alt_text="logo comparison table, Figure 3", url="https://x.org/a.png")).keep


@pytest.mark.parametrize(
    "url, alt, keep",
    [
        ("https://x.org/site-logo.png", "", False),
        ("https://x.org/avatar_12.jpg", "", False),
        ("https://x.org/img/architecture.png", "model", True),
        ("https://x.org/img/a.png", "social icons", False),
        ("https://x.org/img/a.png", "iconic result plot", True),
        ("https://x.org/img/a.png", "the lexicon graph", True),
    ],
)
def test_prune_table(url, alt, keep):
    assert heuristic_prune(candidate(1, url=url, alt_text=alt)).keep is keep


# -- stage 2 ---------------------------------------------------------------------------------


def test_thirty_candidates_three_calls():
    gw, model = funnel_gateway()
    cands = [candidate(i) for i in range(1, 31)]
    context_stage(cands, TOPIC, gw, FunnelCaps(), [])
    assert sorted(model.classify_batches) == [6, 12, 12]
    assert gw.count("chat", "context_classify") == 3


def test_classification_cap_keeps_most_relevant():
    gw, _ = funnel_gateway()
    cands = [candidate(i) for i in range(1, 151)]
    kept = context_stage(cands, TOPIC, gw, FunnelCaps(), [])
    assert len(kept) == 100
    cutoff = min(c.relevance for c in kept)
    dropped = {c.id for c in cands} - {c.id for c in kept}
    assert all(SyntheticFunnel.relevance(i) <= cutoff for i in dropped)


def test_missing_and_malformed_entries_mean_drop(caplog):
    gw = MockGateway(responders={"context_classify": json.dumps([{"image_id": "Image_1", "keep": True}])})
    out = classify_context([candidate(1), candidate(2)], TOPIC, gw)
    assert [c.keep for c in out] == [True, False]
    with caplog.at_level(logging.WARNING):
        out = classify_context([candidate(1)], TOPIC, MockGateway(responders={"context_classify": "???"}))
    assert out[0].keep is False


def test_batch_over_limit_rejected():
    with pytest.raises(ValueError):
        classify_context([candidate(i) for i in range(1, 14)], TOPIC, MockGateway())


# -- stage 3 ---------------------------------------------------------------------------------


def test_eighty_keepers_fifty_retained():
    gw, _ = funnel_gateway()
    cands = [candidate(i, relevance=1.0) for i in range(1, 81)]
    assert len(rerank_by_topic(cands, TOPIC, [learning(1)], OUTLINE, gw)) == 50


def test_rerank_fallback_keeps_input_order(caplog):
    gw = MockGateway(responders={"image_rerank": "garbage"})
    cands = [candidate(i) for i in range(1, 61)]
    with caplog.at_level(logging.WARNING):
        out = rerank_by_topic(cands, TOPIC, [], OUTLINE, gw)
    assert [c.id for c in out] == [c.id for c in cands[:50]]
    assert gw.count("chat") == 2


SECTION_PAIRS = [
    ("Results & Benchmarks", ["1. Intro", "4. Benchmark Results"], "4. Benchmark Results"),
    ("Benchmark results", ["Benchmark Results"], "Benchmark Results"),
    ("architecture", ["System Architecture", "Results"], "System Architecture"),
    ("The Architecture", ["Architecture"], "Architecture"),
    ("Evaluation", ["Results", "Discussion"], UNASSIGNED),
    ("", ["Results"], UNASSIGNED),
    (None, ["Results"], UNASSIGNED),
    ("Training setup and data", ["Training Data", "Setup"], "Training Data"),
    ("Limitations", ["Limitations and Future Work"], UNASSIGNED),
    ("Limitations & future work", ["Limitations and Future Work"], "Limitations and Future Work"),
    ("Hardware design", ["Hardware", "Software"], "Hardware"),
    ("Costs", ["Cost Analysis"], "Cost Analysis"),
    ("Cost of inference at scale", ["Cost Analysis"], UNASSIGNED),
    ("Model Architecture Overview", ["1. Architecture Overview", "2. Model Zoo"], "1. Architecture Overview"),
    # tie at 0.5: the earlier outline title wins
    ("Studies", ["Ablation Studies", "Case Study"], "Ablation Studies"),
]


@pytest.mark.parametrize("recommended, titles, expected", SECTION_PAIRS)
def test_section_matching(recommended, titles, expected):
    assert match_section(recommended, titles) == expected


# -- stage 4 ---------------------------------------------------------------------------------

VLM = """visible_title: Latency vs batch size
visible_text: Batch, Latency (ms)
ocr_keywords: latency, batch size, Latency
ocr_summary: Line plot.
deductive_evidence_atoms:
1. [Line rises after batch 32] -> [Memory becomes the bottleneck] -> [Explains the knee]
2. [Two curves cross at 8] -> [Crossover point] -> [Motivates the threshold]
3. [Flat region below 4] -> [Overhead dominated] -> [Small batches waste compute]
"""


def test_three_atoms_parsed():
    ocr, atoms = parse_visual_analysis(VLM, "Image_3")
    assert len(atoms) == 3
    assert atoms[0].visual_features == "Line rises after batch 32" and atoms[0].image_id == "Image_3"
    assert ocr.keywords == ("latency", "batch size")


def test_zero_atoms_tolerated():
    ocr, atoms = parse_visual_analysis("visible_title: x\nocr_keywords: a", "Image_1")
    assert atoms == () and ocr.visible_title == "x"


def test_vlm_failure_leaves_unanalyzed(caplog):
    with caplog.at_level(logging.WARNING):
        c = visual_analyze(candidate(1), TOPIC, MockGateway(responders={"vlm_analysis": "I cannot see images"}))
    assert not c.analyzed


def test_vlm_gets_image_url():
    seen = []
    gw = MockGateway(responders={"vlm_analysis": lambda r: seen.append(r.images) or VLM})
    visual_analyze(candidate(7), TOPIC, gw)
    assert seen == [("https://host7.example.com/fig/7.png",)]


# -- stage 5 ---------------------------------------------------------------------------------


def test_twenty_analyzed_seventeen_accepted_fifteen_briefs():
    model = SyntheticFunnel(keep=lambda stage, i: int(i.split("_")[1]) <= 17)
    gw, _ = funnel_gateway(model)
    cands = [analyzed(i) for i in range(1, 21)]
    drops = []
    briefs = final_select(cands, TOPIC, [], gw, FunnelCaps(), drops)
    assert len(briefs) == 15
    assert sum(d["reason"] == "rejected by selector" for d in drops) == 3


def test_duplicate_dedup_key_one_brief():
    gw, _ = funnel_gateway()
    cands = [analyzed(1, url="https://x.org/f.png?utm_source=a"), analyzed(2, url="https://x.org/f.png")]
    briefs = final_select(cands, TOPIC, [], gw)
    assert len({b.candidate.dedup_key for b in briefs}) == len(briefs) == 1


def test_credibility_clamped_to_unit_interval():
    reply = json.dumps([{"image_id": "Image_1", "use": True, "composite_score": 9, "credibility": 4}])
    (b,) = final_select([analyzed(1)], TOPIC, [], MockGateway(responders={"final_select": reply}))
    assert b.candidate.credibility == 1.0 and b.composite_score == 5.0


# -- composition ---------------------------------------------------------------------------------


def test_five_hundred_pool_counts(tmp_path):
    gw, model = funnel_gateway()
    result = run_enrichment(pool_of(500), OUTLINE, TOPIC, FunnelCaps(), gw, tmp_path)
    counts = [result.stage_counts[s] for s in STAGES]
    assert counts == sorted(counts, reverse=True)
    assert counts[2:] == [100, 50, 20, 15]
    assert len(model.classify_batches) == math.ceil(500 / 12)
    assert model.vlm_calls == 20
    report = json.loads((tmp_path / "enrichment_report.json").read_text())
    assert report["bypassed"] is False and len(report["briefs"]) == 15


def test_diagram_among_logos_survives():
    pool = EvidencePool()
    pool.add_learning(learning(1))
    for i in range(1, 51):
        pool.add_image(candidate(i, url=f"https://x.org/logo-{i}.png", alt_text="partner logo"))
    pool.add_image(candidate(51, url="https://x.org/arch.png", alt_text="system architecture diagram"))
    gw, _ = funnel_gateway()
    result = run_enrichment(pool, OUTLINE, TOPIC, FunnelCaps(), gw)
    assert [b.image_id for b in result.briefs] == ["Image_51"]
    assert result.stage_counts["heuristic_prune"] == 1


def test_caps_must_be_nonincreasing():
    with pytest.raises(ValueError):
        FunnelCaps(after_rerank=120)


def test_metadata_only_selection_has_no_model_calls(tmp_path):
    result = metadata_only_selection(pool_of(30), FunnelCaps(), tmp_path)
    assert result.bypassed and len(result.briefs) == 15
    assert json.loads((tmp_path / "enrichment_report.json").read_text())["bypassed"] is True
