"""Prompt templates, prompt assembly and model-output parsing."""

from __future__ import annotations

import enum
import hashlib
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Sequence

from culrag.core import Locale, Question, normalize_answer

NO_ANSWER = "<NO_ANSWER>"

SUPPORTED_ONLY_INSTRUCTION = (
    "Answer only if the answer is explicitly supported by the context above. "
    f"If it is not, output exactly {NO_ANSWER}."
)

_LABEL_PREFIX = re.compile(r"^\s*(?:answer|respuesta|答案)\s*[:：]\s*", re.IGNORECASE)
_BARE_LABEL = re.compile(r"^[\(\[]?\s*([^\s\)\]\.:：]+)\s*[\)\]\.:：]?$")
_LEADING_LABEL = re.compile(r"^[\(\[]?\s*([^\s\)\]\.:：]+)\s*[\)\]\.:：]\s+\S")


class TemplateId(str, enum.Enum):
    MP = "MP"
    RP_V1 = "RP_V1"
    RP_V2 = "RP_V2"

    @classmethod
    def parse(cls, value: str | TemplateId) -> TemplateId:
        """Accept ``MP``/``RP_V1`` as well as the CLI spelling ``mp``/``rp-v1``."""
        if isinstance(value, TemplateId):
            return value
        return cls(value.strip().upper().replace("-", "_"))

    @property
    def cli_name(self) -> str:
        return self.value.lower().replace("_", "-")

    @property
    def filename(self) -> str:
        return f"{self.value.lower()}.txt"


class AnswerKind(str, enum.Enum):
    ANSWER = "ANSWER"
    ABSTAIN = "ABSTAIN"


@dataclass(frozen=True)
class ParsedAnswer:
    kind: AnswerKind
    text: str
    raw: str
    normalized: str = ""

    @property
    def is_answer(self) -> bool:
        return self.kind is AnswerKind.ANSWER

    @classmethod
    def abstain(cls, raw: str = NO_ANSWER) -> ParsedAnswer:
        return cls(AnswerKind.ABSTAIN, "", raw)


@lru_cache(maxsize=None)
def preamble(template_id: TemplateId | str) -> str:
    tid = TemplateId.parse(template_id)
    return resources.files(__package__).joinpath(tid.filename).read_bytes().decode("utf-8")


@lru_cache(maxsize=None)
def shipped_checksums() -> dict[str, str]:
    text = resources.files(__package__).joinpath("checksums.txt").read_text(encoding="utf-8")
    sums = {}
    for line in text.splitlines():
        if line.strip():
            digest, name = line.split()
            sums[name] = digest
    return sums


def verify_templates() -> dict[TemplateId, bool]:
    sums = shipped_checksums()
    return {
        tid: hashlib.sha256(preamble(tid).encode("utf-8")).hexdigest() == sums.get(tid.filename)
        for tid in TemplateId
    }


def render(
    template_id: TemplateId | str,
    question: Question | None = None,
    context: Sequence[str] = (),
    *,
    instruction: str | None = None,
) -> str:
    """Assemble a prompt.

    Layout: preamble, optional ``Context:`` block, optional extra instruction,
    ``Question:`` line, ``Options:`` block for MCQ, then ``Answer:``. Without
    a question only the preamble is returned.
    """
    text = preamble(template_id)
    if question is None:
        return text
    parts = [text]
    items = [" ".join(c.split()) for c in context if c and c.strip()]
    if items:
        parts.append("Context:\n" + "".join(f"- {c}\n" for c in items))
    if instruction:
        parts.append(instruction + "\n")
    block = f"Question: {question.text}\n"
    if question.options:
        block += "Options:\n" + "".join(f"{o.label}) {o.text}\n" for o in question.options)
    block += "Answer:"
    parts.append(block)
    return "\n".join(parts)


def parse_answer(raw: str, locale: Locale) -> ParsedAnswer:
    if NO_ANSWER in raw:
        return ParsedAnswer.abstain(raw)
    first = next((line.strip() for line in raw.splitlines() if line.strip()), "")
    surface = _LABEL_PREFIX.sub("", first, count=1).strip()
    return ParsedAnswer(AnswerKind.ANSWER, surface, raw, normalize_answer(surface, locale).normalized)


def resolve_option(answer: ParsedAnswer, question: Question) -> str | None:
    """Map a parsed MCQ answer onto one of the question's option labels."""
    if not answer.is_answer or not answer.text:
        return None
    labels = question.option_labels()
    bare = _BARE_LABEL.match(answer.text)
    if bare and bare.group(1) in labels:
        return bare.group(1)
    lead = _LEADING_LABEL.match(answer.text)
    if lead and lead.group(1) in labels:
        return lead.group(1)
    target = normalize_answer(answer.text, question.locale).normalized
    matches = [o.label for o in question.options if normalize_answer(o.text, question.locale).normalized == target]
    return matches[0] if len(matches) == 1 else None
