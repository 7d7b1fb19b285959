"""Helpers for digging structured payloads out of free-form model output."""

from __future__ import annotations

import json
import re
from typing import Any

_FENCE_RE = re.compile(r"^```[\w-]*\s*\n(.*?)\n```\s*$", re.DOTALL)


def strip_code_fence(text: str) -> str:
    m = _FENCE_RE.match(text.strip())
    return m.group(1) if m else text


def extract_tag(text: str, tag: str) -> str | None:
    """Body of the first ``<tag>...</tag>`` block, or None."""
    m = re.search(rf"<{tag}>(.*?)</{tag}>", text, re.DOTALL | re.IGNORECASE)
    return m.group(1).strip("\n") if m else None


def parse_json_block(text: str, kind: type = object) -> Any:
    """Decode the first JSON value in ``text`` (optionally of type ``kind``).

    Tolerates code fences and leading chatter. Raises ``ValueError`` when
    nothing decodable is found.
    """
    text = strip_code_fence(text.strip())
    decoder = json.JSONDecoder()
    openers = "[{" if kind is object else ("[" if kind is list else "{")
    for i, ch in enumerate(text):
        if ch not in openers:
            continue
        try:
            value, _ = decoder.raw_decode(text, i)
        except json.JSONDecodeError:
            continue
        if kind is object or isinstance(value, kind):
            return value
    raise ValueError("no JSON payload found")


def clamp(value: Any, lo: float, hi: float, default: float) -> float:
    try:
        number = float(value)
    except (TypeError, ValueError):
        return default
    if number != number:  # NaN
        return default
    return max(lo, min(hi, number))
