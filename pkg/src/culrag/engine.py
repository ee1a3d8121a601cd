"""Wires configuration, providers and knowledge bases into a question answerer."""

from __future__ import annotations

import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Sequence

from culrag.cascade import (
    AnswerRecord,
    CascadeConfig,
    DuckDuckGoProvider,
    FixtureSearchProvider,
    KnowledgeBase,
    Providers,
    QuestionError,
    WebSearch,
    answer_rag_base,
    answer_rag_web,
)
from culrag.config import EngineConfig
from culrag.core import Question
from culrag.model_client import ModelProvider, OllamaClient, resolve_endpoint
from culrag.routing import Mode, route

logger = logging.getLogger(__name__)


def make_search(config: EngineConfig, *, allow_live: bool) -> WebSearch:
    if config.search.startswith("fixture:"):
        provider = FixtureSearchProvider(config.search.split(":", 1)[1])
        return WebSearch(provider, config.cache_dir)
    if config.search == "live" and not allow_live:
        raise ValueError("live web search is only allowed in ask mode; use fixture:<dir> or cache-only")
    return WebSearch(DuckDuckGoProvider(), config.cache_dir, cache_only=config.search == "cache-only")


def make_model(config: EngineConfig) -> ModelProvider:
    return OllamaClient(
        endpoint=resolve_endpoint(config.endpoint),
        timeout=config.timeout,
        retries=config.retries,
        max_in_flight=config.max_in_flight,
    )


class Engine:
    def __init__(self, config: EngineConfig, model: ModelProvider, search: WebSearch | None) -> None:
        self.config = config
        self.model = model
        self.search = search
        self._kbs: dict[str, KnowledgeBase | None] = {}
        self._lock = threading.Lock()

    @property
    def cascade_config(self) -> CascadeConfig:
        c = self.config
        return CascadeConfig(
            template=c.template,
            k=c.k,
            similarity_floor=c.similarity_floor,
            use_local_db=c.use_local_db,
            web_top_n=c.web_top_n,
            embed_model=c.embed_model,
            temperature=c.temperature,
            max_tokens=c.max_tokens,
            direct_patterns=c.direct_patterns,
        )

    def has_kb(self, country: str) -> bool:
        root = Path(self.config.kb_root) / country
        return (root / "entries.jsonl").exists() and (root / "index" / "meta.json").exists()

    def missing_kbs(self, questions: Sequence[Question]) -> list[str]:
        countries = sorted({route(q.locale, self.config.routing).kb_id for q in questions})
        return [c for c in countries if not self.has_kb(c)]

    def kb(self, country: str) -> KnowledgeBase | None:
        with self._lock:
            if country not in self._kbs:
                self._kbs[country] = KnowledgeBase.load(self.config.kb_root, country) if self.has_kb(country) else None
            return self._kbs[country]

    def answer(self, question: Question) -> AnswerRecord:
        decision = route(question.locale, self.config.routing)
        if self.config.mode is Mode.RAG_BASE:
            kb = self.kb(decision.kb_id) if self.config.use_local_db else None
            return answer_rag_base(question, kb, self.model, decision, self.cascade_config)
        # the summary stage still reads the country KB when the local DB is off
        providers = Providers(self.model, self.search, self.kb(decision.kb_id))
        return answer_rag_web(question, providers, decision, self.cascade_config)

    def answer_all(self, questions: Sequence[Question]) -> list[AnswerRecord | QuestionError]:
        """Answer in input order; per-question failures are returned, not raised."""

        def one(q: Question) -> AnswerRecord | QuestionError:
            try:
                return self.answer(q)
            except QuestionError as exc:
                logger.error("%s", exc)
                return exc

        with ThreadPoolExecutor(max_workers=self.config.jobs) as pool:
            return list(pool.map(one, questions))
