"""Domain types, dataset I/O and answer normalization."""

from __future__ import annotations

import enum
import json
import re
import unicodedata
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

LOCALE_TOKEN = re.compile(r"[a-z]{2}-[A-Z]{2}")
_LANGUAGE = re.compile(r"[a-z]{2}")
_REGION = re.compile(r"[A-Z]{2}")
_WS = re.compile(r"\s+")
_TERMINAL_PUNCT = ".。!?！？"


class DatasetError(ValueError):
    """A dataset record could not be turned into a Question."""


class LocaleError(ValueError):
    pass


class Track(str, enum.Enum):
    SAQ = "SAQ"
    MCQ = "MCQ"


@dataclass(frozen=True, order=True)
class Locale:
    language: str
    region: str

    def __post_init__(self) -> None:
        if not _LANGUAGE.fullmatch(self.language or ""):
            raise LocaleError(f"invalid language code {self.language!r}")
        if not _REGION.fullmatch(self.region or ""):
            raise LocaleError(f"invalid region code {self.region!r}")

    @classmethod
    def parse(cls, text: str) -> Locale:
        """Parse a canonical ``xx-YY`` string."""
        if not LOCALE_TOKEN.fullmatch(text):
            raise LocaleError(f"not a canonical locale: {text!r}")
        language, region = text.split("-")
        return cls(language, region)

    def __str__(self) -> str:
        return f"{self.language}-{self.region}"


@dataclass(frozen=True)
class Option:
    label: str
    text: str


@dataclass(frozen=True)
class Question:
    id: str
    locale: Locale
    text: str
    track: Track
    options: tuple[Option, ...] = ()
    references: tuple[str, ...] = ()
    gold_label: str | None = None

    def __post_init__(self) -> None:
        if self.track is Track.MCQ:
            if not self.options:
                raise DatasetError(f"{self.id}: MCQ question without options")
            labels = [o.label for o in self.options]
            if len(set(labels)) != len(labels):
                raise DatasetError(f"{self.id}: duplicate option label")
        elif self.options:
            raise DatasetError(f"{self.id}: SAQ question must not carry options")

    def option_labels(self) -> list[str]:
        return [o.label for o in self.options]

    def to_record(self) -> dict:
        record: dict = {"id": self.id, "question": self.text, "track": self.track.value}
        if self.options:
            record["options"] = [{"label": o.label, "text": o.text} for o in self.options]
        if self.references:
            record["references"] = list(self.references)
        if self.gold_label is not None:
            record["gold"] = self.gold_label
        return record


@dataclass(frozen=True)
class NormalizedAnswer:
    surface: str
    normalized: str


def parse_locale(question_id: str) -> Locale:
    """Return the first ``xx-YY`` token found scanning ``question_id`` left to right."""
    match = LOCALE_TOKEN.search(question_id)
    if match is None:
        raise LocaleError(f"no locale token in id {question_id!r}")
    language, region = match.group(0).split("-")
    return Locale(language, region)


def normalize_text(text: str, language: str | None = None) -> str:
    text = unicodedata.normalize("NFKC", text)
    text = _WS.sub(" ", text.strip())
    text = text.casefold()
    text = text.rstrip(_TERMINAL_PUNCT + " ")
    if language == "zh":
        text = text.replace(" ", "")
    return text


def normalize_answer(text: str, locale: Locale) -> NormalizedAnswer:
    normalized = normalize_text(text, locale.language)
    # casefold output is not always NFKC-stable, so iterate to a fixed point.
    while True:
        again = normalize_text(normalized, locale.language)
        if again == normalized:
            break
        normalized = again
    return NormalizedAnswer(surface=text, normalized=normalized)


def question_from_record(record: object, where: str = "record", track: Track | None = None) -> Question:
    if not isinstance(record, dict):
        raise DatasetError(f"{where}: record is not an object")
    for name in ("id", "question"):
        if not isinstance(record.get(name), str):
            raise DatasetError(f"{where}: field {name!r} missing or not a string")
    qid = record["id"]
    try:
        locale = parse_locale(qid)
    except LocaleError:
        raise DatasetError(f"{where}: unparseable locale in id {qid!r}") from None

    raw_track = record.get("track", track.value if track else None)
    try:
        record_track = Track(raw_track)
    except ValueError:
        raise DatasetError(f"{where}: field 'track' has invalid value {raw_track!r}") from None
    if track is not None and record_track is not track:
        raise DatasetError(f"{where}: field 'track' is {record_track.value}, expected {track.value}")

    options = []
    for i, opt in enumerate(record.get("options") or []):
        if not isinstance(opt, dict) or not isinstance(opt.get("label"), str) or not isinstance(opt.get("text"), str):
            raise DatasetError(f"{where}: field 'options[{i}]' must have string label and text")
        options.append(Option(opt["label"], opt["text"]))

    references = record.get("references") or []
    if not isinstance(references, list) or not all(isinstance(r, str) for r in references):
        raise DatasetError(f"{where}: field 'references' must be a list of strings")
    gold = record.get("gold")
    if gold is not None and not isinstance(gold, str):
        raise DatasetError(f"{where}: field 'gold' must be a string")

    try:
        return Question(
            id=qid,
            locale=locale,
            text=record["question"],
            track=record_track,
            options=tuple(options),
            references=tuple(references),
            gold_label=gold,
        )
    except DatasetError as exc:
        raise DatasetError(f"{where}: {exc}") from None


def load_questions(path: str | Path, track: Track | str | None = None) -> list[Question]:
    """Load questions from a JSON-lines file or a file holding one JSON array.

    When ``track`` is given, every record must belong to it; records without a
    ``track`` field inherit it.
    """
    path = Path(path)
    if track is not None:
        track = Track(track)
    text = path.read_text(encoding="utf-8")
    if text.lstrip().startswith("["):
        try:
            records = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path}: offset {exc.pos}: invalid JSON ({exc.msg})") from None
        return [question_from_record(r, f"{path}: record {i}", track) for i, r in enumerate(records)]

    questions = []
    for lineno, line in enumerate(text.split("\n"), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from None
        questions.append(question_from_record(record, f"{path}: line {lineno}", track))
    return questions


def dump_questions(questions: Iterable[Question], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for q in questions:
            fh.write(json.dumps(q.to_record(), ensure_ascii=False) + "\n")
