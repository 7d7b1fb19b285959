"""Run configuration, loadable from a YAML file.

Example::

    topic: "Mixture-of-experts inference on consumer GPUs"
    output_dir: runs/moe
    cache: true
    research: {rounds: 3, queries_per_round: 6}
    enrichment: {final_cap: 10}
    scoring: {per_section_limit: 3}
    models:
      generation: {base_url: "https://api.openai.com/v1", model: "gpt-4o", api_key_env: OPENAI_API_KEY}
      visual: {model: "gpt-4o"}
    search: {kind: serper, api_key_env: SERPER_API_KEY}
    http: {attempts: 3, max_concurrent: 8}
    renderer: ["python", "-m", "figreport.render"]
    ablations: {disable_enrichment: false, global_generation: false}

Credentials are only ever read from the environment variables named here.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from .enrichment import FunnelCaps
from .gateway import GENERATION, VISUAL
from .gateway.http import Endpoint, HttpSettings, SearchProvider
from .research import ResearchConfig
from .writer import ScoringParams


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Ablations:
    disable_enrichment: bool = False
    global_generation: bool = False


@dataclass
class RunConfig:
    topic: str
    research: ResearchConfig = field(default_factory=ResearchConfig)
    caps: FunnelCaps = field(default_factory=FunnelCaps)
    scoring: ScoringParams = field(default_factory=ScoringParams)
    http: HttpSettings = field(default_factory=HttpSettings)
    ablations: Ablations = field(default_factory=Ablations)
    output_dir: Path = Path("runs/latest")
    cache: bool = True
    mock_transcript: Path | None = None
    renderer: tuple[str, ...] | None = None
    chart_workers: int = 4

    def __post_init__(self) -> None:
        if not self.topic or not self.topic.strip():
            raise ConfigError("topic must be nonempty")
        self.output_dir = Path(self.output_dir)


def _coerce(default: Any, value: Any, where: str) -> Any:
    if dataclasses.is_dataclass(default) and not isinstance(default, type):
        if not isinstance(value, Mapping):
            raise ConfigError(f"{where}: expected a mapping")
        return build(type(default), value, where)
    if isinstance(default, frozenset):
        return frozenset(value)
    if isinstance(default, tuple):
        return tuple(value)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false")
        return value
    if isinstance(default, (int, float)) and not isinstance(value, (int, float)):
        raise ConfigError(f"{where}: expected a number")
    return value


def build(cls, data: Mapping[str, Any], where: str = ""):
    """Instantiate dataclass ``cls`` from ``data``, rejecting unknown keys."""
    template = cls()
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{where or cls.__name__}: unknown keys {sorted(unknown)}")
    kwargs = {k: _coerce(getattr(template, k), v, f"{where}.{k}".lstrip(".")) for k, v in data.items()}
    try:
        return dataclasses.replace(template, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where or cls.__name__}: {exc}") from exc


_TOP_KEYS = {
    "topic",
    "output_dir",
    "cache",
    "research",
    "enrichment",
    "scoring",
    "models",
    "search",
    "http",
    "renderer",
    "ablations",
    "mock_transcript",
    "chart_workers",
}


def from_mapping(data: Mapping[str, Any], **overrides: Any) -> RunConfig:
    data = dict(data or {})
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
    http = build(HttpSettings, data.get("http", {}), "http")
    endpoints = dict(http.endpoints)
    for role, raw in (data.get("models") or {}).items():
        if role not in (GENERATION, VISUAL):
            raise ConfigError(f"models: unknown role {role!r}")
        endpoints[role] = build(Endpoint, raw, f"models.{role}")
    http = dataclasses.replace(http, endpoints=endpoints)
    if "search" in data:
        http = dataclasses.replace(http, search=build(SearchProvider, data["search"], "search"))
    if not isinstance(data.get("cache", True), bool):
        raise ConfigError("cache: expected true/false")
    workers = data.get("chart_workers", 4)
    if isinstance(workers, bool) or not isinstance(workers, int) or workers < 1:
        raise ConfigError("chart_workers: expected a positive integer")
    fields: dict[str, Any] = {
        "topic": data.get("topic", ""),
        "research": build(ResearchConfig, data.get("research", {}), "research"),
        "caps": build(FunnelCaps, data.get("enrichment", {}), "enrichment"),
        "scoring": build(ScoringParams, data.get("scoring", {}), "scoring"),
        "http": http,
        "ablations": build(Ablations, data.get("ablations", {}), "ablations"),
        "cache": data.get("cache", True),
        "chart_workers": workers,
    }
    if data.get("output_dir"):
        fields["output_dir"] = Path(data["output_dir"])
    if data.get("mock_transcript"):
        fields["mock_transcript"] = Path(data["mock_transcript"])
    if data.get("renderer"):
        fields["renderer"] = tuple(data["renderer"])
    for key, value in overrides.items():
        if value is None:
            continue
        if key in ("disable_enrichment", "global_generation"):
            fields["ablations"] = dataclasses.replace(fields["ablations"], **{key: value})
        else:
            fields[key] = value
    return RunConfig(**fields)


def load_config(path: str | Path | None, **overrides: Any) -> RunConfig:
    data: Mapping[str, Any] = {}
    if path is not None:
        try:
            data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(data, Mapping):
            raise ConfigError(f"{path}: top level must be a mapping")
    return from_mapping(data, **overrides)
