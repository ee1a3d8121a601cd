"""Deterministic in-process model provider for tests and offline runs."""

from __future__ import annotations

import hashlib
import re
import threading
from typing import Callable, Iterable, Sequence

from culrag.core import Question, Track, normalize_text
from culrag.model_client import GenerationRequest, GenerationResult
from culrag.prompts import NO_ANSWER

_TOKEN = re.compile(r"[㐀-鿿豈-﫿]|[^\W_]+", re.UNICODE)
_CJK = re.compile(r"[㐀-鿿豈-﫿]")


def tokenize(text: str) -> list[str]:
    tokens = _TOKEN.findall(text.casefold())
    # CJK text has no spaces, so add character bigrams for a little word sense.
    bigrams = [a + b for a, b in zip(tokens, tokens[1:]) if _CJK.fullmatch(a) and _CJK.fullmatch(b)]
    return tokens + bigrams


class HashingEmbedder:
    """Signed feature hashing of word and CJK-bigram tokens."""

    def __init__(self, dimension: int = 256) -> None:
        self.dimension = dimension

    def __call__(self, text: str) -> list[float]:
        vec = [0.0] * self.dimension
        for token in tokenize(text):
            digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
            slot = int.from_bytes(digest[:4], "little") % self.dimension
            vec[slot] += 1.0 if digest[4] & 1 else -1.0
        if not any(vec):
            vec[0] = 1.0
        return vec


def prompt_question(prompt: str) -> str | None:
    for line in reversed(prompt.split("\n")):
        if line.startswith("Question: "):
            return line[len("Question: ") :]
    return None


def prompt_context(prompt: str) -> list[str]:
    lines = prompt.split("\n")
    try:
        start = lines.index("Context:") + 1
    except ValueError:
        return []
    items = []
    for line in lines[start:]:
        if not line.startswith("- "):
            break
        items.append(line[2:])
    return items


def evidence_oracle(questions: Iterable[Question]) -> Callable[[str], str]:
    """Build an answerer that is right exactly when the evidence holds the answer.

    SAQ: returns the first reference whose normalized form occurs in the
    normalized context. MCQ: returns the gold label when the gold option's
    text occurs in the context. Otherwise ``<NO_ANSWER>``.
    """
    by_text = {q.text: q for q in questions}

    def answer(prompt: str) -> str:
        question = by_text.get(prompt_question(prompt) or "")
        if question is None:
            return NO_ANSWER
        lang = question.locale.language
        context = normalize_text(" ".join(prompt_context(prompt)), lang)
        if not context:
            return NO_ANSWER
        if question.track is Track.MCQ:
            gold = next((o for o in question.options if o.label == question.gold_label), None)
            if gold is not None and normalize_text(gold.text, lang) in context:
                return gold.label
            return NO_ANSWER
        for ref in question.references:
            if normalize_text(ref, lang) and normalize_text(ref, lang) in context:
                return ref
        return NO_ANSWER

    return answer


class MockProvider:
    """Satisfies the model-provider contract without any I/O."""

    def __init__(self, answer: Callable[[str], str] | None = None, dimension: int = 256) -> None:
        self.answer = answer or (lambda prompt: NO_ANSWER)
        self.embedder = HashingEmbedder(dimension)
        self.prompts: list[str] = []
        self._lock = threading.Lock()

    @classmethod
    def oracle(cls, questions: Sequence[Question], dimension: int = 256) -> MockProvider:
        return cls(evidence_oracle(questions), dimension)

    def generate(self, request: GenerationRequest) -> GenerationResult:
        with self._lock:
            self.prompts.append(request.prompt)
        return GenerationResult(text=self.answer(request.prompt), model_id=request.model_id, latency_ms=0)

    def embed(self, model_id: str, text: str) -> list[float]:
        if not text:
            raise ValueError("cannot embed empty text")
        return self.embedder(text)
