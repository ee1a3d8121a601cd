"""Locale-routed retrieval-augmented QA with small local models."""

from culrag.core import Locale, Question, Track, load_questions, normalize_answer, parse_locale
from culrag.routing import Mode, RouteDecision, RoutingConfig, route

__version__ = "0.1.0"

__all__ = [
    "Locale",
    "Mode",
    "Question",
    "RouteDecision",
    "RoutingConfig",
    "Track",
    "load_questions",
    "normalize_answer",
    "parse_locale",
    "route",
]
