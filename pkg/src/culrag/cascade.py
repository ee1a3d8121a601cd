"""Per-question answer production: single-pass RAG and cascaded RAG with abstention."""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import re
import threading
import time
from dataclasses import dataclass, field
from html.parser import HTMLParser
from pathlib import Path
from typing import Callable, Mapping, Protocol, Sequence

import httpx

from culrag.core import Question, Track
from culrag.kb_builder import KBEntry, Source, read_entries
from culrag.model_client import ModelClientError, ModelProvider, GenerationRequest
from culrag.prompts import (
    NO_ANSWER,
    SUPPORTED_ONLY_INSTRUCTION,
    AnswerKind,
    ParsedAnswer,
    TemplateId,
    parse_answer,
    render,
    resolve_option,
)
from culrag.routing import RouteDecision
from culrag.vector_store import VectorIndex, VectorStoreError

logger = logging.getLogger(__name__)


class Stage(str, enum.Enum):
    DIRECT = "DIRECT"
    WEB_SEARCH = "WEB_SEARCH"
    LOCAL_KB = "LOCAL_KB"
    WIKI_SUMMARY = "WIKI_SUMMARY"


NONE_STAGE = "NONE"


class SearchError(RuntimeError):
    pass


class QuestionError(RuntimeError):
    def __init__(self, question_id: str, cause: Exception) -> None:
        super().__init__(f"{question_id}: {cause}")
        self.question_id = question_id
        self.cause = cause


# --- web search ---------------------------------------------------------------


@dataclass(frozen=True)
class Snippet:
    title: str
    text: str
    url: str = ""

    def as_evidence(self) -> str:
        return f"{self.title}: {self.text}" if self.title else self.text


class SearchProvider(Protocol):
    name: str

    def search(self, query: str, limit: int) -> list[Snippet]: ...


def query_hash(query: str) -> str:
    return hashlib.sha256(query.encode("utf-8")).hexdigest()


def _snippets_from_json(data: object) -> list[Snippet]:
    items = data.get("results", []) if isinstance(data, dict) else data
    return [Snippet(str(i.get("title", "")), str(i.get("text", i.get("body", ""))), str(i.get("url", ""))) for i in items]


class FixtureSearchProvider:
    """Serves ``<dir>/<sha256(query)>.json`` files; a missing file means no results."""

    name = "fixture"

    def __init__(self, directory: str | Path) -> None:
        self.directory = Path(directory)
        self.calls = 0

    def search(self, query: str, limit: int) -> list[Snippet]:
        self.calls += 1
        path = self.directory / f"{query_hash(query)}.json"
        if not path.exists():
            return []
        try:
            return _snippets_from_json(json.loads(path.read_text(encoding="utf-8")))[:limit]
        except (ValueError, AttributeError) as exc:
            raise SearchError(f"bad search fixture {path}: {exc}") from exc


class _DuckDuckGoParser(HTMLParser):
    def __init__(self) -> None:
        super().__init__()
        self.results: list[dict] = []
        self._field: str | None = None

    def handle_starttag(self, tag, attrs):
        cls = dict(attrs).get("class") or ""
        if tag == "a" and "result__a" in cls.split():
            self.results.append({"title": "", "text": "", "url": dict(attrs).get("href", "")})
            self._field = "title"
        elif "result__snippet" in cls.split() and self.results:
            self._field = "text"

    def handle_endtag(self, tag):
        if tag in ("a", "div", "td"):
            self._field = None

    def handle_data(self, data):
        if self._field and self.results:
            self.results[-1][self._field] += data


class DuckDuckGoProvider:
    """Scrapes the HTML results page of a DuckDuckGo-compatible endpoint."""

    name = "duckduckgo"

    def __init__(self, endpoint: str = "https://html.duckduckgo.com/html/", timeout: float = 20.0, transport=None) -> None:
        self.endpoint = endpoint
        self._client = httpx.Client(timeout=timeout, transport=transport, headers={"User-Agent": "culrag/0.1"})
        self.calls = 0

    def search(self, query: str, limit: int) -> list[Snippet]:
        self.calls += 1
        try:
            response = self._client.post(self.endpoint, data={"q": query})
            response.raise_for_status()
        except httpx.HTTPError as exc:
            raise SearchError(f"web search failed: {exc}") from exc
        parser = _DuckDuckGoParser()
        parser.feed(response.text)
        out = []
        for r in parser.results:
            title, text = " ".join(r["title"].split()), " ".join(r["text"].split())
            if title or text:
                out.append(Snippet(title, text, r["url"]))
        return out[:limit]


class WebSearch:
    """Disk-cached search front end keyed by (provider name, query).

    With ``cache_only`` the provider is never called and a cache miss yields
    no results.
    """

    def __init__(
        self,
        provider: SearchProvider,
        cache_dir: str | Path | None,
        *,
        cache_only: bool = False,
        fetch_limit: int = 8,
    ) -> None:
        self.provider = provider
        self.cache_dir = Path(cache_dir) if cache_dir is not None else None
        self.cache_only = cache_only
        self.fetch_limit = fetch_limit
        self._lock = threading.Lock()

    def _cache_path(self, query: str) -> Path | None:
        if self.cache_dir is None:
            return None
        return self.cache_dir / f"{query_hash(self.provider.name + chr(0) + query)}.json"

    def search(self, query: str, top_n: int = 8) -> list[Snippet]:
        path = self._cache_path(query)
        if path is not None and path.exists():
            return _snippets_from_json(json.loads(path.read_text(encoding="utf-8")))[:top_n]
        if self.cache_only:
            return []
        results = self.provider.search(query, max(top_n, self.fetch_limit))
        if path is not None:
            record = {
                "provider": self.provider.name,
                "query": query,
                "results": [{"title": s.title, "text": s.text, "url": s.url} for s in results],
            }
            with self._lock:
                path.parent.mkdir(parents=True, exist_ok=True)
                path.write_text(json.dumps(record, ensure_ascii=False, indent=1) + "\n", encoding="utf-8")
        return results[:top_n]


def web_search(query: str, provider: WebSearch | SearchProvider, top_n: int = 8) -> list[Snippet]:
    if isinstance(provider, WebSearch):
        return provider.search(query, top_n)
    return provider.search(query, top_n)[:top_n]


# --- direct-answer gate ---------------------------------------------------------

DEFAULT_DIRECT_PATTERNS: dict[str, tuple[str, ...]] = {
    "en": (r"\bcapital (?:city )?of\b", r"\bcurrency of\b", r"\bofficial language of\b", r"\bin (?:what|which) year\b"),
    "es": (r"\bcapital de\b", r"\bmoneda (?:oficial )?de\b", r"\bidioma oficial de\b", r"\ben qué año\b"),
    "zh": (r"的首都", r"的货币|的貨幣", r"官方语言|官方語言", r"哪一年"),
}


def should_answer_direct(question: Question, patterns: Mapping[str, Sequence[str]] | None = None) -> bool:
    """True when the question looks encyclopedic enough to skip retrieval."""
    table = DEFAULT_DIRECT_PATTERNS if patterns is None else patterns
    return any(re.search(p, question.text, re.IGNORECASE) for p in table.get(question.locale.language, ()))


# --- knowledge base handle -------------------------------------------------------


class KnowledgeBase:
    def __init__(self, entries: Sequence[KBEntry], index: VectorIndex) -> None:
        self.entries = {e.id: e for e in entries}
        self.index = index
        missing = [i for i in index.ids if i not in self.entries]
        if missing:
            raise VectorStoreError(f"index {index.kb_id} references unknown entries, e.g. {missing[0]}")
        self._by_source: dict[Source, list[str]] = {}
        for entry_id in index.ids:
            self._by_source.setdefault(self.entries[entry_id].source, []).append(entry_id)

    @classmethod
    def load(cls, kb_root: str | Path, country: str) -> KnowledgeBase:
        return cls(read_entries(kb_root, country), VectorIndex.load(Path(kb_root) / country / "index"))

    def retrieve(
        self,
        query: Sequence[float],
        k: int,
        floor: float = -1.0,
        sources: Sequence[Source] | None = None,
    ) -> list[tuple[KBEntry, float]]:
        restrict = None
        if sources is not None:
            restrict = [i for s in sources for i in self._by_source.get(s, ())]
            if not restrict:
                return []
        hits = self.index.search(query, k, restrict)
        return [(self.entries[h.entry_id], h.score) for h in hits if h.score >= floor]


# --- records ---------------------------------------------------------------------


@dataclass
class StageOutcome:
    stage: Stage
    succeeded: bool
    evidence: list[str] = field(default_factory=list)
    answer: ParsedAnswer | None = None
    error: str | None = None
    latency_ms: int = 0

    def __post_init__(self) -> None:
        if self.succeeded and (self.answer is None or self.answer.kind is not AnswerKind.ANSWER):
            raise ValueError("a successful stage needs an ANSWER")


@dataclass
class AnswerRecord:
    question_id: str
    final: ParsedAnswer
    source_stage: Stage | None
    evidence_used: list[tuple[str, str]]
    route: RouteDecision
    timing: dict[str, int] = field(default_factory=dict)
    stages: list[StageOutcome] = field(default_factory=list)
    retrieval_log: list[str] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if (self.final.kind is AnswerKind.ABSTAIN) != (self.source_stage is None):
            raise ValueError("ABSTAIN must coincide with source stage NONE")

    @property
    def source_name(self) -> str:
        return self.source_stage.value if self.source_stage else NONE_STAGE

    def to_prediction(self) -> dict:
        return {
            "id": self.question_id,
            "answer": self.final.text if self.final.is_answer else NO_ANSWER,
            "source_stage": self.source_name,
            "evidence": [text for _, text in self.evidence_used],
        }

    def to_dict(self) -> dict:
        out = self.to_prediction()
        out.update(
            kind=self.final.kind.value,
            raw=self.final.raw,
            model_id=self.route.model_id,
            kb_id=self.route.kb_id,
            prompt_language=str(self.route.prompt_language),
            evidence_sources=[tag for tag, _ in self.evidence_used],
            timing_ms=self.timing,
            stages=[
                {"stage": s.stage.value, "succeeded": s.succeeded, "evidence": len(s.evidence), "error": s.error}
                for s in self.stages
            ],
            retrieval_log=self.retrieval_log,
            errors=self.errors,
        )
        return out


# --- pipelines -------------------------------------------------------------------


@dataclass(frozen=True)
class CascadeConfig:
    template: TemplateId = TemplateId.RP_V1
    k: int = 3
    similarity_floor: float = 0.35
    use_local_db: bool = True
    web_top_n: int = 8
    embed_model: str = "mistral:7b"
    temperature: float = 0.0
    max_tokens: int = 64
    direct_patterns: Mapping[str, Sequence[str]] | None = None


def _ask(
    model: ModelProvider,
    route: RouteDecision,
    question: Question,
    config: CascadeConfig,
    evidence: Sequence[str],
    instruction: str | None,
) -> ParsedAnswer:
    prompt = render(config.template, question, evidence, instruction=instruction)
    result = model.generate(
        GenerationRequest(route.model_id, prompt, temperature=config.temperature, max_tokens=config.max_tokens)
    )
    parsed = parse_answer(result.text, route.prompt_language)
    if question.track is Track.MCQ and parsed.is_answer:
        label = resolve_option(parsed, question)
        if label is None:
            return ParsedAnswer.abstain(result.text)
        return ParsedAnswer(AnswerKind.ANSWER, label, result.text, label)
    return parsed


def _usable(answer: ParsedAnswer) -> bool:
    return answer.is_answer and bool(answer.text)


def _ms(start: float) -> int:
    return int((time.monotonic() - start) * 1000)


def answer_rag_base(
    question: Question,
    kb: KnowledgeBase | None,
    model: ModelProvider,
    route: RouteDecision,
    config: CascadeConfig = CascadeConfig(),
) -> AnswerRecord:
    """Single-pass retrieval and generation; a no-context retry replaces abstentions."""
    timing: dict[str, int] = {}
    try:
        start = time.monotonic()
        hits: list[tuple[KBEntry, float]] = []
        if kb is not None and len(kb.index):
            query = model.embed(config.embed_model, question.text)
            hits = kb.retrieve(query, config.k, config.similarity_floor)
        timing["retrieval"] = _ms(start)
        retrieval_log = [entry.text for entry, _ in hits] or ["NULL"]
        for line in retrieval_log:
            logger.info("%s retrieved: %s", question.id, line)

        evidence = [entry.text for entry, _ in hits]
        start = time.monotonic()
        answer = _ask(model, route, question, config, evidence, None)
        timing["generate"] = _ms(start)
        stage = Stage.LOCAL_KB if evidence else Stage.DIRECT
        used = [(entry.source.value, entry.text) for entry, _ in hits]
        if not _usable(answer):
            start = time.monotonic()
            answer = _ask(model, route, question, config, (), None)
            timing["fallback"] = _ms(start)
            stage, used = Stage.DIRECT, []
    except (ModelClientError, VectorStoreError, ValueError) as exc:
        raise QuestionError(question.id, exc) from exc

    if not _usable(answer):
        return AnswerRecord(question.id, ParsedAnswer.abstain(answer.raw), None, [], route, timing, [], retrieval_log)
    return AnswerRecord(question.id, answer, stage, used, route, timing, [], retrieval_log)


@dataclass
class Providers:
    model: ModelProvider
    search: WebSearch | SearchProvider | None = None
    kb: KnowledgeBase | None = None


def answer_rag_web(
    question: Question,
    providers: Providers,
    route: RouteDecision,
    config: CascadeConfig = CascadeConfig(),
) -> AnswerRecord:
    """Cascade DIRECT -> WEB_SEARCH -> LOCAL_KB -> WIKI_SUMMARY; first supported answer wins."""
    outcomes: list[StageOutcome] = []
    errors: list[str] = []
    query_vec: list[float] | None = None

    def kb_evidence(sources: Sequence[Source]) -> list[tuple[str, str]]:
        nonlocal query_vec
        if providers.kb is None or not len(providers.kb.index):
            return []
        if query_vec is None:
            query_vec = providers.model.embed(config.embed_model, question.text)
        hits = providers.kb.retrieve(query_vec, config.k, config.similarity_floor, sources)
        return [(e.source.value, e.text) for e, _ in hits]

    def web_evidence() -> list[tuple[str, str]]:
        if providers.search is None:
            return []
        snippets = web_search(question.text, providers.search, config.web_top_n)
        return [("WEB", s.as_evidence()) for s in snippets]

    plan: list[tuple[Stage, Callable[[], list[tuple[str, str]]] | None]] = []
    if should_answer_direct(question, config.direct_patterns):
        plan.append((Stage.DIRECT, None))
    plan.append((Stage.WEB_SEARCH, web_evidence))
    if config.use_local_db:
        plan.append((Stage.LOCAL_KB, lambda: kb_evidence((Source.WIKI_BODY, Source.CURATED))))
    plan.append((Stage.WIKI_SUMMARY, lambda: kb_evidence((Source.WIKI_SUMMARY,))))

    for stage, gather in plan:
        start = time.monotonic()
        try:
            evidence = gather() if gather is not None else []
            if gather is not None and not evidence:
                outcomes.append(StageOutcome(stage, False, latency_ms=_ms(start)))
                continue
            texts = [t for _, t in evidence]
            instruction = SUPPORTED_ONLY_INSTRUCTION if gather is not None else None
            answer = _ask(providers.model, route, question, config, texts, instruction)
        except (ModelClientError, SearchError, VectorStoreError, OSError, ValueError) as exc:
            errors.append(f"{stage.value}: {exc}")
            outcomes.append(StageOutcome(stage, False, error=str(exc), latency_ms=_ms(start)))
            logger.warning("%s: stage %s failed: %s", question.id, stage.value, exc)
            continue
        ok = _usable(answer)
        outcomes.append(StageOutcome(stage, ok, texts, answer, latency_ms=_ms(start)))
        if ok:
            return AnswerRecord(
                question.id, answer, stage, evidence, route, {o.stage.value: o.latency_ms for o in outcomes}, outcomes, errors=errors
            )

    return AnswerRecord(
        question.id,
        ParsedAnswer.abstain(),
        None,
        [],
        route,
        {o.stage.value: o.latency_ms for o in outcomes},
        outcomes,
        errors=errors,
    )
