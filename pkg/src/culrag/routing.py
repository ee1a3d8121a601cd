"""Question-ID driven model and knowledge-base routing."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from culrag.core import Locale, parse_locale

__all__ = ["Mode", "RouteDecision", "RoutingConfig", "parse_locale", "route"]


class Mode(str, enum.Enum):
    RAG_BASE = "RAG_BASE"
    RAG_WEB = "RAG_WEB"


@dataclass(frozen=True)
class RoutingConfig:
    mode: Mode = Mode.RAG_WEB
    default_model: str = "mistral:7b"
    chinese_model: str = "deepseek-llm:67b"
    chinese_variants: frozenset[str] = field(default_factory=lambda: frozenset({"zh-CN", "zh-TW", "zh-SG"}))
    base_model: str = "gemma3:4b"

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "chinese_variants", frozenset(self.chinese_variants))
        for variant in self.chinese_variants:
            Locale.parse(variant)
        for name in ("default_model", "chinese_model", "base_model"):
            if not getattr(self, name):
                raise ValueError(f"routing config: {name} must be a non-empty model id")

    def to_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "default_model": self.default_model,
            "chinese_model": self.chinese_model,
            "chinese_variants": sorted(self.chinese_variants),
            "base_model": self.base_model,
        }


@dataclass(frozen=True)
class RouteDecision:
    model_id: str
    kb_id: str
    prompt_language: Locale


def route(locale: Locale, config: RoutingConfig) -> RouteDecision:
    """Pick the model and country knowledge base for ``locale``.

    Membership in ``config.chinese_variants`` decides the Chinese model, not
    the language code alone: an unlisted ``zh`` locale gets the default model.
    """
    if config.mode is Mode.RAG_BASE:
        model = config.base_model
    elif str(locale) in config.chinese_variants:
        model = config.chinese_model
    else:
        model = config.default_model
    return RouteDecision(model_id=model, kb_id=locale.region, prompt_language=locale)
