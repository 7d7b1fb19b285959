import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import candidate, learning
from figreport.evidence import (
    AdaptiveOutline,
    EvidencePool,
    Learning,
    OutlineBullet,
    OutlineNode,
    OutlineParseError,
    dedup_key,
    extract_image_placeholders,
    filter_citations,
    image_sort_key,
    parse_outline,
    render_outline,
    render_outline_budgeted,
)

SKELETON = """# 1. Section Title
## 1.1 Subsection Title
a. Specific point <citation>id 1, id 3</citation>
Gap: evidence still needed
"""


def test_citation_bullet():
    outline = parse_outline("# 1. Methods\na. point <citation>id 3, id 7</citation>")
    assert outline.nodes[0].bullets == (OutlineBullet("point", (3, 7)),)


def test_skeleton_shape():
    outline = parse_outline(SKELETON)
    assert len(outline.nodes) == 1
    top = outline.nodes[0]
    assert len(top.children) == 1
    bullets = top.children[0].bullets
    assert bullets[0].citations == (1, 3)
    assert bullets[1].is_gap and bullets[1].text == "evidence still needed"


def test_reader_mode_strips_tags_and_gaps():
    outline = parse_outline(SKELETON)
    reader = render_outline(outline, "reader")
    assert "a. Specific point" in reader
    assert "<citation>" not in reader
    assert "Gap:" not in reader


def test_internal_round_trip():
    outline = parse_outline(SKELETON)
    assert parse_outline(render_outline(outline)) == outline


@pytest.mark.parametrize(
    "text, problem",
    [
        ("# 1. A\n## 1.1.1 Deep", "does not match"),
        ("# 1. A\n### 1.1.1 Deep", "no parent"),
        ("# 1. A\n# 1. Again", "duplicate"),
        ("# 1. A\n## 2.1 Orphan", "no parent"),
        ("a. floating bullet", "before first heading"),
        ("# Untitled heading", "without section number"),
    ],
)
def test_malformed_outline_names_the_line(text, problem):
    with pytest.raises(OutlineParseError) as err:
        parse_outline(text)
    assert problem in str(err.value)
    assert err.value.line_no >= 1


def test_junk_citation_tokens_skipped():
    outline = parse_outline("# 1. A\na. x <citation>id 2, see above, 5</citation>")
    assert outline.nodes[0].bullets[0].citations == (2, 5)


def test_gap_with_citations_drops_them():
    outline = parse_outline("# 1. A\nGap: missing <citation>id 4</citation>")
    bullet = outline.nodes[0].bullets[0]
    assert bullet.is_gap and bullet.citations == ()


def test_filter_citations_keeps_bullet():
    outline = parse_outline("# 1. A\na. x <citation>id 1, id 999</citation>")
    fixed, removed = filter_citations(outline, {1})
    assert removed == [999]
    assert fixed.nodes[0].bullets[0] == OutlineBullet("x", (1,))


def test_branch_citations_first_occurrence_order():
    outline = parse_outline("# 1. A\na. x <citation>id 3, id 1</citation>\n## 1.1 B\na. y <citation>id 1, id 7</citation>")
    assert outline.nodes[0].citation_ids() == [3, 1, 7]


def test_budgeted_render_keeps_structure():
    text = "# 1. A\n" + "\n".join(f"a. bullet number {i} <citation>id {i}</citation>" for i in range(50)) + "\nGap: hole"
    outline = parse_outline(text)
    short = render_outline_budgeted(outline, 200)
    assert len(short) <= 200
    assert short.startswith("# 1. A") and "Gap: hole" in short


# -- placeholders --------------------------------------------------------------------------


def test_placeholder_with_description():
    assert extract_image_placeholders("see [Image_4: training curve]") == [("Image_4", "training curve")]


def test_repeated_placeholder_listed_twice():
    assert extract_image_placeholders("[Image_2] and again [Image_2]") == [("Image_2", ""), ("Image_2", "")]


PLACEHOLDER_CASES = [
    ("", []),
    ("no images here", []),
    ("[Image_1]", [("Image_1", "")]),
    ("[Image_12: a b c]", [("Image_12", "a b c")]),
    ("[Image_3:tight]", [("Image_3", "tight")]),
    ("[Image_3 : spaced]", []),
    ("[image_3]", []),
    ("[Image_]", []),
    ("[Image_x]", []),
    ("[Image_5: x] [Image_6: y]", [("Image_5", "x"), ("Image_6", "y")]),
    ("[Image_7: nested [bad]]", []),
    ("[[Image_8]]", [("Image_8", "")]),
    ("text[Image_9]text", [("Image_9", "")]),
    ("[Image_10: line\nbreak]", []),
    ("[Image_11:   padded   ]", [("Image_11", "padded")]),
    ("![alt](http://x/y.png)", []),
    ("[Image_1][Image_1]", [("Image_1", ""), ("Image_1", "")]),
    ("[Learning id 3]", []),
    ("(Image_4)", []),
    ("[Image_0042: zero padded]", [("Image_0042", "zero padded")]),
]


@pytest.mark.parametrize("text, expected", PLACEHOLDER_CASES)
def test_placeholder_hand_checked(text, expected):
    assert extract_image_placeholders(text) == expected


def test_image_sort_key_numeric():
    ids = ["Image_10", "Image_9", "Image_100", "Image_1"]
    assert sorted(ids, key=image_sort_key) == ["Image_1", "Image_9", "Image_10", "Image_100"]


# -- dedup keys and the pool ------------------------------------------------------------------


def test_dedup_key_normalization():
    a = dedup_key("HTTPS://Example.COM/fig/a.png?utm_source=x&v=2#frag")
    b = dedup_key("https://example.com/fig/a.png?v=2")
    assert a == b
    assert dedup_key("https://example.com/fig/A.png") != dedup_key("https://example.com/fig/a.png")


def test_pool_dedups_images_and_rejects_duplicate_learning_ids():
    pool = EvidencePool()
    assert pool.add_image(candidate(1, url="https://x.org/a.png?utm_medium=rss"))
    assert not pool.add_image(candidate(2, url="https://x.org/a.png"))
    pool.add_learning(learning(1))
    with pytest.raises(ValueError):
        pool.add_learning(learning(1))


def test_pool_json_round_trip():
    pool = EvidencePool()
    pool.add_learning(Learning(1, "fact [Image_1: fig]", "https://a.org", image_refs=("Image_1",)))
    pool.add_image(candidate(1))
    again = EvidencePool.from_json(pool.to_json())
    assert again == pool
    assert again.to_json() == pool.to_json()


def test_learning_requires_refs_for_placeholders():
    with pytest.raises(ValueError):
        Learning(1, "see [Image_3]", "https://a.org")


def test_candidate_range_checks():
    with pytest.raises(ValueError):
        candidate(1, credibility=6.0)
    assert candidate(1, figure_type="meme").figure_type == "other"


# -- property: internal render round-trips -----------------------------------------------------

# Parsed bullet text is whitespace-normalized, so generate canonical text only.
_words = st.lists(st.text(alphabet="abcdefghij", min_size=1, max_size=5), min_size=1, max_size=3).map(" ".join)
_bullets = st.lists(
    st.one_of(
        st.builds(lambda t, c: OutlineBullet(t, tuple(dict.fromkeys(c))), _words, st.lists(st.integers(1, 40), max_size=3)),
        st.builds(lambda t: OutlineBullet(t, (), True), _words),
    ),
    max_size=3,
)


@st.composite
def outlines(draw):
    nodes = []
    for i in range(1, draw(st.integers(1, 4)) + 1):
        children = tuple(
            OutlineNode(f"{i}.{j}", draw(_words), tuple(draw(_bullets))) for j in range(1, draw(st.integers(0, 3)) + 1)
        )
        nodes.append(OutlineNode(str(i), draw(_words), tuple(draw(_bullets)), children))
    return AdaptiveOutline(tuple(nodes))


@settings(max_examples=60, deadline=None)
@given(outlines())
def test_round_trip_property(outline):
    assert parse_outline(render_outline(outline)) == outline
    assert "Gap:" not in render_outline(outline, "reader")
