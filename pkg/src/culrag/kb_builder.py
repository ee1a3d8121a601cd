"""Per-country knowledge base construction from Wikipedia pages and curated facts."""

from __future__ import annotations

import enum
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

from culrag.core import Locale, LocaleError

logger = logging.getLogger(__name__)

# Latin terminators need trailing whitespace or end of text; full-width CJK
# terminators end a sentence on their own.
_SENTENCE_END = re.compile(r"(?<=[.!?])(?:\s+|$)|(?<=[。！？])\s*")
_PARAGRAPH_BREAK = re.compile(r"\n\s*\n")
_SLUG = re.compile(r"[^\w]+")


class KBBuildError(ValueError):
    pass


class Source(str, enum.Enum):
    WIKI_SUMMARY = "WIKI_SUMMARY"
    WIKI_BODY = "WIKI_BODY"
    CURATED = "CURATED"


@dataclass(frozen=True)
class ChunkingConfig:
    chunk_size: int = 500
    overlap: int = 100

    def __post_init__(self) -> None:
        if self.chunk_size <= 0:
            raise ValueError("chunk_size must be positive")
        if not 0 <= self.overlap < self.chunk_size:
            raise ValueError("overlap must satisfy 0 <= overlap < chunk_size")

    @property
    def stride(self) -> int:
        return self.chunk_size - self.overlap


@dataclass(frozen=True)
class Chunk:
    text: str
    start_offset: int


@dataclass(frozen=True)
class KBEntry:
    id: str
    text: str
    source: Source
    locale: Locale
    country: str
    topic: str
    origin: str

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise KBBuildError(f"entry {self.id}: empty text")

    def to_record(self) -> dict:
        record = asdict(self)
        record["source"] = self.source.value
        record["locale"] = str(self.locale)
        return record

    @classmethod
    def from_record(cls, record: dict) -> KBEntry:
        return cls(
            id=record["id"],
            text=record["text"],
            source=Source(record["source"]),
            locale=Locale.parse(record["locale"]),
            country=record["country"],
            topic=record.get("topic", ""),
            origin=record.get("origin", ""),
        )


@dataclass(frozen=True)
class WikiPage:
    title: str
    summary: str
    body: str = ""
    origin: str = ""


def chunk_text(text: str, config: ChunkingConfig) -> list[Chunk]:
    """Split ``text`` into fixed-size character windows advancing by ``config.stride``.

    The last window may be shorter. A window that would lie entirely inside
    the previous one is never emitted.
    """
    chunks = []
    n = len(text)
    start = 0
    while start < n:
        chunks.append(Chunk(text[start : start + config.chunk_size], start))
        if start + config.chunk_size >= n:
            break
        start += config.stride
    return chunks


def split_sentences(text: str) -> list[str]:
    parts = _SENTENCE_END.split(text.strip())
    return [p.strip() for p in parts if p and p.strip()]


def split_paragraphs(text: str) -> list[str]:
    return [p.strip() for p in _PARAGRAPH_BREAK.split(text) if p.strip()]


def _segments_with_offsets(text: str, pieces: Iterable[str]) -> list[tuple[str, int]]:
    out, cursor = [], 0
    for piece in pieces:
        pos = text.find(piece, cursor)
        out.append((piece, pos))
        cursor = pos + len(piece)
    return out


def _slug(title: str) -> str:
    return _SLUG.sub("_", title).strip("_") or "page"


def read_keywords(path: str | Path) -> list[str]:
    keywords = []
    for line in Path(path).read_text(encoding="utf-8").split("\n"):
        line = line.split("#", 1)[0].strip()
        if line:
            keywords.append(line)
    return keywords


def read_page(path: str | Path) -> WikiPage:
    path = Path(path)
    try:
        record = json.loads(path.read_text(encoding="utf-8"))
        return WikiPage(
            title=record["title"],
            summary=record.get("summary", ""),
            body=record.get("body") or "",
            origin=path.name,
        )
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise KBBuildError(f"unreadable page file {path}: {exc}") from exc


def read_pages(directory: str | Path, jobs: int = 4) -> list[WikiPage]:
    files = sorted(Path(directory).glob("*.json"))
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        pages = list(pool.map(read_page, files))
    return sorted(pages, key=lambda p: p.origin)


def title_matches(title: str, keywords: Sequence[str]) -> bool:
    folded = title.casefold()
    return any(k.casefold() in folded for k in keywords)


def extract_wiki_entries(
    pages: Sequence[WikiPage],
    keywords: Sequence[str],
    config: ChunkingConfig,
    locale: Locale,
    *,
    paragraph_mode: bool = False,
) -> list[KBEntry]:
    """Turn keyword-matched pages into summary sentence entries and body chunks."""
    if not keywords:
        raise KBBuildError("keyword list is empty")
    country = locale.region
    entries = []
    for page in pages:
        if not title_matches(page.title, keywords):
            continue
        origin = page.origin or page.title
        base = f"{country}:{locale.language}:{_slug(origin.removesuffix('.json'))}"
        splitter = split_paragraphs if paragraph_mode else split_sentences
        for text, offset in _segments_with_offsets(page.summary, splitter(page.summary)):
            entries.append(
                KBEntry(f"{base}:s{offset}", text, Source.WIKI_SUMMARY, locale, country, page.title, origin)
            )
        for chunk in chunk_text(page.body, config):
            if not chunk.text.strip():
                continue
            entries.append(
                KBEntry(
                    f"{base}:b{chunk.start_offset}",
                    chunk.text,
                    Source.WIKI_BODY,
                    locale,
                    country,
                    page.title,
                    origin,
                )
            )
    return entries


def load_curated_facts(path: str | Path) -> list[KBEntry]:
    path = Path(path)
    entries = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").split("\n"), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise KBBuildError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from None
        text, locale = record.get("text"), record.get("locale")
        if not isinstance(locale, str):
            raise KBBuildError(f"{path}: line {lineno}: missing 'locale'")
        if not isinstance(text, str) or not text.strip():
            raise KBBuildError(f"{path}: line {lineno}: missing or blank 'text'")
        try:
            loc = Locale.parse(locale)
        except LocaleError as exc:
            raise KBBuildError(f"{path}: line {lineno}: {exc}") from None
        entries.append(
            KBEntry(
                id=f"curated:{path.name}:{lineno}",
                text=text.strip(),
                source=Source.CURATED,
                locale=loc,
                country=record.get("country") or loc.region,
                topic=record.get("topic", ""),
                origin=record.get("source") or path.name,
            )
        )
    return entries


def group_by_country(entries: Iterable[KBEntry]) -> dict[str, list[KBEntry]]:
    groups: dict[str, list[KBEntry]] = {}
    for entry in entries:
        groups.setdefault(entry.country, []).append(entry)
    return groups


def write_entries(entries: Sequence[KBEntry], kb_root: str | Path, country: str) -> Path:
    seen: set[str] = set()
    for entry in entries:
        if entry.id in seen:
            raise KBBuildError(f"duplicate entry id {entry.id} in KB {country}")
        seen.add(entry.id)
    out = Path(kb_root) / country / "entries.jsonl"
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        for entry in entries:
            fh.write(json.dumps(entry.to_record(), ensure_ascii=False) + "\n")
    return out


def read_entries(kb_root: str | Path, country: str) -> list[KBEntry]:
    path = Path(kb_root) / country / "entries.jsonl"
    return [
        KBEntry.from_record(json.loads(line))
        for line in path.read_text(encoding="utf-8").split("\n")
        if line.strip()
    ]


def build_knowledge_bases(
    pages_root: str | Path | None,
    keywords_root: str | Path | None,
    curated: Sequence[str | Path],
    kb_root: str | Path,
    config: ChunkingConfig = ChunkingConfig(),
    *,
    paragraph_mode: bool = False,
    jobs: int = 4,
) -> dict[str, int]:
    """Build every country KB found under the page/keyword roots plus curated files.

    Layout: ``pages_root/<locale>/*.json`` and ``keywords_root/<locale>.txt``.
    Returns the number of entries written per country.
    """
    entries: list[KBEntry] = []
    if pages_root is not None:
        if keywords_root is None:
            raise KBBuildError("pages given without keyword lists")
        for kw_file in sorted(Path(keywords_root).glob("*.txt")):
            locale = Locale.parse(kw_file.stem)
            page_dir = Path(pages_root) / kw_file.stem
            if not page_dir.is_dir():
                logger.warning("no pages for %s under %s", locale, pages_root)
                continue
            pages = read_pages(page_dir, jobs=jobs)
            found = extract_wiki_entries(pages, read_keywords(kw_file), config, locale, paragraph_mode=paragraph_mode)
            logger.info("%s: %d wiki entries from %d pages", locale, len(found), len(pages))
            entries.extend(found)
    for path in curated:
        entries.extend(load_curated_facts(path))

    counts = {}
    for country, group in sorted(group_by_country(entries).items()):
        write_entries(group, kb_root, country)
        counts[country] = len(group)
    return counts
