import re

import pytest

from conftest import analyzed, brief, candidate, learning
from figreport.evidence import OcrResult, extract_image_placeholders
from figreport.gateway import MockGateway
from figreport.planner import ReportPlan, SectionPlan
from figreport.writer import (
    ScoringParams,
    SectionDraft,
    UsedFigureRegistry,
    format_image_slot,
    generate_section,
    route_section_images,
    score_image,
    tokenize,
    validate_section_refs,
    write_global,
    write_sections,
)

P = ScoringParams()


def section(title="alpha beta gamma", summary="", ids=(), gap=None, index=1):
    return SectionPlan(index, title, summary, tuple(ids), gap)


def image(alt, *, role="", cred=0.0, ftype=None, n=1, keywords=()):
    return candidate(n, alt_text=alt, evidence_role=role, credibility=cred, figure_type=ftype, ocr=OcrResult(keywords=keywords))


def test_tokenize_title():
    assert tokenize("Transformer Architecture Diagram") == {"transformer", "architecture", "diagram"}


def test_tokenize_drops_stopwords_and_short():
    assert tokenize("The KV-cache of an LLM is big") == {"cache", "llm", "big"}


def test_score_substitution():
    v = image("alpha beta gamma", role="z" * 30, cred=1.0, ftype="architecture")
    assert score_image(v, section()) == 2 * 3 + 1.0 + 3.0 + 1.0 == 11.0


def test_single_match_discarded():
    assert score_image(image("alpha delta"), section()) is None


def test_threshold_is_strict():
    v = image("alpha beta", role="z" * 10, cred=0.0, ftype="photo")
    assert score_image(v, section()) == 4.0
    assert route_section_images([brief(v)], section(), UsedFigureRegistry()) == []


def test_ocr_keywords_and_role_count():
    v = image("unrelated", role="gamma things", keywords=("alpha",))
    assert score_image(v, section()) == 2 * 2 + 0 + 0 + 0


def test_summary_tokens_count():
    v = image("delta epsilon")
    assert score_image(v, section(summary="a. delta and epsilon")) == 4.0


def test_registry_excludes():
    v = image("alpha beta gamma", ftype="architecture")
    reg = UsedFigureRegistry().with_keys([v.dedup_key])
    assert route_section_images([brief(v)], section(), reg) == []
    assert route_section_images([brief(v)], section(), UsedFigureRegistry()) == [v]


def test_routing_order_cap_and_prior():
    briefs = [brief(image("alpha beta gamma", ftype="benchmark", n=i), "Other") for i in range(1, 7)]
    favored = image("alpha beta gamma", ftype="benchmark", n=9)
    briefs.append(brief(favored, "alpha beta gamma"))
    out = route_section_images(briefs, section(), UsedFigureRegistry())
    assert len(out) == P.per_section_limit
    assert out[0] is favored
    assert [v.id for v in out[1:]] == ["Image_1", "Image_2", "Image_3"]


def test_image_slot_format():
    assert format_image_slot([]) == "none"
    line = format_image_slot([analyzed(2)])
    assert line.startswith("- [Image_2: Encoder with pruning]") and "visual landmarks: red arrow into the pruner" in line


# -- prompts -----------------------------------------------------------------------------------


def _capture():
    seen = []
    return MockGateway(responders={"section_generation": lambda r: seen.append(r.user) or "## x\nbody"}), seen


def test_gap_in_prompt():
    gw, seen = _capture()
    generate_section(section(gap="no field data", ids=(1,)), [learning(1)], [], "", "t", gw)
    assert "Known evidence gap for this section, if any:\nno field data" in seen[0]


def test_prompt_has_exactly_routed_learnings():
    gw, seen = _capture()
    generate_section(section(ids=(2, 5)), [learning(2), learning(5)], [], "", "t", gw)
    assert {int(x) for x in re.findall(r"\[Learning id (\d+)\]", seen[0])} == {2, 5}


def test_wrong_subset_rejected():
    with pytest.raises(ValueError):
        generate_section(section(ids=(2, 5)), [learning(2)], [], "", "t", MockGateway())


def test_heading_normalized_and_empty_output_stubbed():
    gw = MockGateway(responders={"section_generation": "# Whatever the model said\ntext"})
    draft = generate_section(section(title="Results", ids=(), index=3), [], [], "", "t", gw)
    assert draft.markdown.startswith("## 3. Results\ntext")
    empty = MockGateway(responders={"section_generation": "   "})
    stub = generate_section(section(title="Results", gap="no data", index=2), [], [], "", "t", empty)
    assert stub.markdown.startswith("## 2. Results") and "no data" in stub.markdown
    assert empty.count("chat") == 2


# -- validation ------------------------------------------------------------------------------------


def _validate(md, provided, registry=None):
    return validate_section_refs(SectionDraft(1, md), provided, registry or UsedFigureRegistry())


def test_unprovided_placeholder_removed():
    draft, _ = _validate("See [Image_7] and [Image_2].", {"Image_2": "k2"})
    assert "Image_7" not in draft.markdown and "[Image_2]" in draft.markdown


def test_repeat_collapses_to_first():
    draft, reg = _validate("[Image_2: a]\n\ntext\n\n[Image_2: again]", {"Image_2": "k2"})
    assert [p for p, _ in extract_image_placeholders(draft.markdown)] == ["Image_2"]
    assert "k2" in reg and draft.used_image_ids == {"Image_2"}


def test_hallucinated_caption_removed():
    md = "intro\n\n[Image_999: invented]\n*Figure: Image_999 shows x.*\n\nafter"
    draft, _ = _validate(md, {})
    assert "Image_999" not in draft.markdown
    assert draft.markdown == "intro\n\nafter"


def test_reuse_across_sections_blocked():
    draft, reg = _validate("[Image_3]", {"Image_3": "shared"})
    second, _ = validate_section_refs(SectionDraft(2, "[Image_8]"), {"Image_8": "shared"}, reg)
    assert "Image_8" not in second.markdown


def test_same_key_two_ids_in_one_section():
    draft, _ = _validate("[Image_3]\n\n[Image_4]", {"Image_3": "k", "Image_4": "k"})
    assert [p for p, _ in extract_image_placeholders(draft.markdown)] == ["Image_3"]


# -- section loop -------------------------------------------------------------------------------------


def _plan(n=2):
    sections = tuple(
        SectionPlan(k, f"alpha beta gamma {k}", "", (k,), None) for k in range(1, n + 1)
    )
    return ReportPlan(sections, "# 1. x", "guide")


def test_sections_written_in_order_without_reuse(tmp_path):
    v = image("alpha beta gamma", ftype="architecture", n=1)

    def reply(r):
        ids = re.findall(r"^- \[(Image_\d+)", r.user, re.M)
        return "## s\n" + "\n".join(f"[{i}]" for i in ids)

    gw = MockGateway(responders={"section_generation": reply})
    drafts, reg = write_sections(_plan(), [learning(1), learning(2)], [brief(v)], "t", gw, P, tmp_path)
    assert drafts[0].used_image_ids == {"Image_1"} and drafts[1].used_image_ids == set()
    assert sorted(p.name for p in (tmp_path / "sections").iterdir()) == [
        "sec_1.md",
        "sec_1.prompt.txt",
        "sec_2.md",
        "sec_2.prompt.txt",
    ]
    assert v.dedup_key in reg


def test_global_pass_single_call():
    gw = MockGateway(responders={"global_generation": "## 1. A\n[Image_1]\n[Image_1]\n[Image_5]"})
    draft, _ = write_global(_plan(), [learning(1), learning(2)], [brief(analyzed(1))], "t", gw)
    assert gw.count("chat") == 1
    assert [p for p, _ in extract_image_placeholders(draft.markdown)] == ["Image_1"]
