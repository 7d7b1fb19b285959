"""Keyword tokenization shared by image routing and section matching."""

from __future__ import annotations

import re

STOPWORDS = frozenset(
    """
    a an and are as at be been but by can for from has have how in into is it its
    of on or our over than that the their them then there these this those to was
    were what when where which while who why will with within without you your
    via per also not all any each more most other some such only both between
    """.split()
)

_SPLIT_RE = re.compile(r"[\W_]+")


def tokenize(text: str, *, min_len: int = 3, stopwords: frozenset[str] = STOPWORDS) -> set[str]:
    """Lowercased alphanumeric tokens of at least ``min_len`` chars, minus stopwords."""
    return {t for t in _SPLIT_RE.split(text.lower()) if len(t) >= min_len and t not in stopwords}


def singular(token: str) -> str:
    if len(token) > 4 and token.endswith("ies"):
        return token[:-3] + "y"
    if len(token) > 3 and token.endswith("s") and not token.endswith(("ss", "us", "is")):
        return token[:-1]
    return token


def title_tokens(title: str) -> set[str]:
    """Normalized tokens used for fuzzy title matching (numbers dropped, plurals folded)."""
    return {singular(t) for t in _SPLIT_RE.split(title.lower()) if t and not t.isdigit() and t not in STOPWORDS}


def jaccard(a: set[str], b: set[str]) -> float:
    if not a and not b:
        return 0.0
    return len(a & b) / len(a | b)
