import json
import logging
import sys

import pytest

from conftest import FIXTURES, analyzed, brief
from fakeworld import FakeRenderer, html_chart
from figreport.gateway import MockGateway
from figreport.media import (
    ChartArtifact,
    RendererError,
    SubprocessRenderer,
    VisualizationSpec,
    anchor_token,
    anchorize,
    build_charts,
    chart_contract_problems,
    deanchorize,
    detect_template_chart,
    extract_from_markdown,
    extract_references,
    refine_chart,
    refine_report,
    renumber_headings,
    resolve_media,
    strip_scaffolding,
    validate_anchors,
)

REAL = {"title": "Latency by model", "data": [{"model": "A-1", "ms": 12}, {"model": "B-2", "ms": 9}]}


# -- visualization extraction ----------------------------------------------------------------------


def test_closed_block_becomes_marker():
    md = f"before\n<visualization>{json.dumps(REAL)}</visualization>\nafter"
    out, specs = extract_from_markdown(md, 2)
    assert len(specs) == 1 and specs[0].id == "viz_2_1" and specs[0].title == "Latency by model"
    assert out == "before\n[[CHART_PENDING:viz_2_1]]\nafter"


def test_unterminated_block_dropped(caplog):
    md = f"a\n<visualization>{json.dumps(REAL)}\n\nb"
    with caplog.at_level(logging.WARNING):
        out, specs = extract_from_markdown(md, 1)
    assert specs == [] and "visualization" not in out and out.startswith("a") and out.rstrip().endswith("b")


@pytest.mark.parametrize(
    "body",
    ["not json", json.dumps({"data": [{"label": "Series A", "v": 1}]}), json.dumps({"title": "Sample bar chart"})],
)
def test_invalid_or_dummy_blocks_dropped(body):
    out, specs = extract_from_markdown(f"<visualization>{body}</visualization>", 1)
    assert specs == [] and out == ""


# -- template detection and the chart loop ------------------------------------------------------------


def test_template_detection():
    assert detect_template_chart("<p>sample data</p>")
    assert detect_template_chart("labels: ['Jan','Feb','Mar','Apr']")
    assert not detect_template_chart("releases in Jan, Mar and Oct")
    assert not detect_template_chart("you may see a march of tokens")
    assert not detect_template_chart("<svg width=700>bars</svg>")


def test_month_words_need_word_boundaries():
    assert not detect_template_chart("dynamic mayhem in marching order")


def test_contract_problems():
    good = html_chart("x", [])
    assert chart_contract_problems(good) == []
    assert len(chart_contract_problems("<html>width: 650px</html>")) == 2


SPEC = VisualizationSpec(1, json.dumps(REAL), "viz_1_1")


def _chart_gw(actor_replies, critic_replies, compare="A"):
    actors, critics = iter(actor_replies), iter(critic_replies)
    return MockGateway(
        responders={
            "chart_actor": lambda r: next(actors),
            "chart_revise": lambda r: next(actors),
            "chart_critic": lambda r: next(critics),
            "chart_compare": compare,
        }
    )


def test_clean_first_iteration(tmp_path):
    gw = _chart_gw([html_chart("Latency", REAL["data"])], ["No issues found."])
    art = refine_chart(SPEC, "guide", gw, FakeRenderer(), tmp_path / "media", 1)
    assert art.iterations_used == 1 and art.forced_regenerations == 0
    assert (tmp_path / "media" / "chart_1.png").read_bytes() == art.render_png
    assert art.html_path == "media/chart_1.html"


def test_templates_forced_then_clean(tmp_path):
    tpl = html_chart("", [], template=True)
    gw = _chart_gw([tpl, tpl, html_chart("Latency", REAL["data"])], ["No issues found."])
    art = refine_chart(SPEC, "guide", gw, FakeRenderer(), tmp_path, 1)
    assert art.forced_regenerations == 2 and art.iterations_used == 3
    assert sum("template chart detected" in line for line in art.critic_log) == 2
    assert gw.count("chat", "chart_revise") == 2


def test_never_more_than_three_actor_calls(tmp_path):
    versions = [html_chart(f"v{i}", REAL["data"]) for i in range(5)]
    gw = _chart_gw(versions, ["Axis unlabeled."] * 5, compare="A")
    renderer = FakeRenderer()
    art = refine_chart(SPEC, "guide", gw, renderer, tmp_path, 1)
    assert art.iterations_used == 3 and renderer.calls == 3
    assert gw.count("chat", "chart_actor") + gw.count("chat", "chart_revise") == 3
    assert art.html == versions[1].split("\n", 1)[1].rsplit("```", 1)[0].strip() + "\n"


def test_renderer_failure_drops_chart(tmp_path, caplog):
    class Broken:
        def render(self, html_path, png_path):
            raise RendererError("no browser")

    gw = _chart_gw([html_chart("x", REAL["data"])], [])
    with caplog.at_level(logging.WARNING):
        assert refine_chart(SPEC, "g", gw, Broken(), tmp_path, 1) is None


def test_build_charts_keys_by_spec(tmp_path):
    specs = [SPEC, VisualizationSpec(2, json.dumps(REAL), "viz_2_1")]
    gw = _chart_gw([html_chart("x", REAL["data"])] * 2, ["No issues found."] * 2)
    charts = build_charts(specs, "g", gw, FakeRenderer(), tmp_path / "media", max_workers=2)
    assert set(charts) == {"viz_1_1", "viz_2_1"}
    assert {c.png_path for c in charts.values()} == {"media/chart_1.png", "media/chart_2.png"}


def test_subprocess_renderer(tmp_path):
    html = tmp_path / "a.html"
    html.write_text("<html></html>")
    r = SubprocessRenderer([sys.executable, str(FIXTURES / "fake_render.py")])
    assert "chart drawn" in r.render(html, tmp_path / "a.png")
    with pytest.raises(RendererError):
        SubprocessRenderer([sys.executable, "-c", "import sys; sys.exit(2)"]).render(html, tmp_path / "b.png")


# -- media resolution and anchors -----------------------------------------------------------------------


def test_placeholder_resolves_to_source_url():
    c = analyzed(4, url="https://lab.org/fig4.png", page_url="https://lab.org/post")
    out = resolve_media("Intro line [Image_4: diagram] continues.\n", [brief(c)], {})
    assert "![Encoder with pruning](https://lab.org/fig4.png)" in out
    assert "*Figure 1: Encoder with pruning. Visible: red arrow into the pruner. Source: [lab.org](https://lab.org/post)*" in out
    assert out.startswith("Intro line continues.")


def test_unknown_markers_removed():
    assert resolve_media("a [Image_9] b [[CHART_PENDING:viz_9_9]]\n", [], {}) == "a b\n"


def test_chart_block_numbered_after_figures():
    chart = ChartArtifact("viz_1_1", "<html/>", b"", 1, html_path="media/chart_1.html", png_path="media/chart_1.png", title="T")
    out = resolve_media("[Image_1]\n\n[[CHART_PENDING:viz_1_1]]\n", [brief(analyzed(1))], {"viz_1_1": chart})
    assert "*Figure 1:" in out and "*Figure 2: T." in out and "[Interactive chart](media/chart_1.html)" in out


def test_anchors_in_document_order():
    report = "# T\n![a](u1)\ntext\n![b](u2)\n*Figure 2: b.*\n<!-- chart:c -->\n![c](m.png)\n<!-- /chart -->\n"
    anchored, amap = anchorize(report)
    assert amap.tokens() == [anchor_token(1), anchor_token(2), anchor_token(3)] == [
        "[[MEDIA_ANCHOR_001]]",
        "[[MEDIA_ANCHOR_002]]",
        "[[MEDIA_ANCHOR_003]]",
    ]
    assert anchored.index("001") < anchored.index("002") < anchored.index("003")
    assert deanchorize(anchored, amap) == report


def test_existing_anchor_rejected():
    with pytest.raises(ValueError):
        anchorize("[[MEDIA_ANCHOR_001]]")


def test_refine_truncates_payloads():
    seen = []
    gw = MockGateway(responders={"report_refine": lambda r: seen.append(r.user) or "## 1. A"})
    refine_report("x" * 95_000, "y" * 50_000, "none", "t", gw)
    payload = seen[0].rsplit("Current report with media anchors: ", 1)[1]
    assert len(payload) == 90_000
    assert "y" * 45_000 in seen[0] and "y" * 45_001 not in seen[0]


def test_renumbering():
    assert renumber_headings("## 3. A\n### 3.4 B\n## 5. C") == "## 1. A\n### 1.1 B\n## 2. C"


def test_scaffolding_removed():
    text = "Here is the rewritten report:\n\n<report>\n## 1. A\nbody\n</report>\nLet me know if you need more."
    assert strip_scaffolding(text) == "## 1. A\nbody\n"


def test_missing_anchor_repaired():
    anchored, amap = anchorize("p1\n![a](u1)\np2\n![b](u2)\np3")
    refined = anchored.replace("[[MEDIA_ANCHOR_002]]", "")
    gw = MockGateway(responders={"anchor_repair": lambda r: refined + "\n[[MEDIA_ANCHOR_002]]"})
    out = validate_anchors(refined, amap, gw, anchored)
    assert gw.count("chat", "anchor_repair") == 1
    assert out.count("![b](u2)") == 1 and "Additional Figures" not in out


def test_duplicate_anchor_stripped():
    anchored, amap = anchorize("p\n![a](u1)\nq")
    out = validate_anchors(anchored + "\n[[MEDIA_ANCHOR_001]]\n[[MEDIA_ANCHOR_077]]", amap)
    assert out.count("![a](u1)") == 1 and "MEDIA_ANCHOR" not in out


def test_unrepairable_anchor_appended(caplog):
    anchored, amap = anchorize("p\n![a](u1)\nq")
    gw = MockGateway(responders={"anchor_repair": "still nothing"})
    with caplog.at_level(logging.WARNING):
        out = validate_anchors("p\nq", amap, gw, anchored)
    assert gw.count("chat") == 2
    assert out.rstrip().endswith("![a](u1)") and "## Additional Figures" in out


# -- references ----------------------------------------------------------------------------------------


def test_reference_union():
    report = "see [a](https://a.org/x) and [b](https://b.org/y)"
    learnings = "[Learning id 1] fact (source: https://b.org/y)\n[Learning id 2] more (source: https://c.org/z)"
    refs = extract_references(report, learnings)
    urls = [line.split("](")[1].rstrip(")") for line in refs.splitlines() if line[:1].isdigit()]
    assert urls == ["https://a.org/x", "https://b.org/y", "https://c.org/z"]


def test_arxiv_ids_listed_and_merged():
    refs = extract_references("[preprint](https://arxiv.org/abs/2501.01234v2)", "arXiv:2501.01234 and arXiv: 2402.00001")
    assert refs.count("2501.01234") == 1
    assert "[arXiv:2402.00001](https://arxiv.org/abs/2402.00001)" in refs


def test_image_links_excluded_and_empty():
    assert extract_references("![x](https://a.org/f.png)", "") == ""
