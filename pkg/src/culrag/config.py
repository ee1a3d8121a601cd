"""Engine configuration: defaults, JSON config files and flag overrides."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from culrag.kb_builder import ChunkingConfig
from culrag.prompts import TemplateId
from culrag.routing import Mode, RoutingConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EngineConfig:
    mode: Mode = Mode.RAG_WEB
    routing: RoutingConfig = field(default_factory=RoutingConfig)
    chunking: ChunkingConfig = field(default_factory=ChunkingConfig)
    k: int = 3
    similarity_floor: float = 0.35
    endpoint: str | None = None
    embed_model: str = "mistral:7b"
    search: str = "cache-only"
    cache_dir: str = "cache/search"
    web_top_n: int = 8
    template: TemplateId = TemplateId.RP_V1
    use_local_db: bool = True
    jobs: int = 1
    max_in_flight: int = 1
    temperature: float = 0.0
    max_tokens: int = 64
    timeout: float = 120.0
    retries: int = 3
    kb_root: str = "kb"
    fixtures: str = "fixtures"
    direct_patterns: dict[str, list[str]] | None = None

    def __post_init__(self) -> None:
        set_ = object.__setattr__
        try:
            set_(self, "mode", Mode(self.mode))
            set_(self, "template", TemplateId.parse(self.template))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        # routing.mode always follows the engine mode
        set_(self, "routing", replace(self.routing, mode=self.mode))
        if self.k <= 0:
            raise ConfigError("k must be positive")
        if not -1.0 <= self.similarity_floor <= 1.0:
            raise ConfigError("similarity_floor must lie in [-1, 1]")
        if self.jobs <= 0 or self.max_in_flight <= 0:
            raise ConfigError("jobs and max_in_flight must be positive")
        if not (self.search in ("live", "cache-only") or self.search.startswith("fixture:")):
            raise ConfigError(f"search must be live, cache-only or fixture:<dir>, not {self.search!r}")

    def to_dict(self) -> dict[str, Any]:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["mode"] = self.mode.value
        out["template"] = self.template.cli_name
        out["routing"] = self.routing.to_dict()
        out["chunking"] = asdict(self.chunking)
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> EngineConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        data = dict(data)
        try:
            if isinstance(data.get("routing"), dict):
                data["routing"] = RoutingConfig(**data["routing"])
            if isinstance(data.get("chunking"), dict):
                data["chunking"] = ChunkingConfig(**data["chunking"])
            return cls(**data)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path: str | Path) -> EngineConfig:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(data)

    def override(self, **changes: Any) -> EngineConfig:
        changes = {k: v for k, v in changes.items() if v is not None}
        try:
            return replace(self, **changes)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
