"""Populate page files from the Wikipedia API. Builds never need this."""

from __future__ import annotations

import json
import re
from pathlib import Path
from typing import Sequence

import httpx

_UNSAFE = re.compile(r"[^\w\-]+")


def _page_file(out: Path, title: str) -> Path:
    return out / f"{_UNSAFE.sub('_', title).strip('_') or 'page'}.json"


def fetch_page(client: httpx.Client, title: str, lang: str) -> dict:
    """Return ``{"title", "summary", "body"}`` using the plain-text extracts API."""
    response = client.get(
        f"https://{lang}.wikipedia.org/w/api.php",
        params={
            "action": "query",
            "prop": "extracts",
            "explaintext": 1,
            "redirects": 1,
            "format": "json",
            "titles": title,
        },
    )
    response.raise_for_status()
    pages = response.json().get("query", {}).get("pages", {})
    page = next(iter(pages.values()), {})
    if "missing" in page or "extract" not in page:
        raise RuntimeError(f"no such page on {lang}.wikipedia.org: {title}")
    text = page["extract"]
    summary, _, body = text.partition("\n\n\n==")
    return {"title": page.get("title", title), "summary": summary.strip(), "body": ("==" + body).strip() if body else ""}


def fetch_pages(titles: Sequence[str], lang: str, out: str | Path, transport=None) -> list[Path]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    headers = {"User-Agent": "culrag/0.1 (knowledge base builder)"}
    with httpx.Client(timeout=30.0, transport=transport, headers=headers) as client:
        for title in titles:
            try:
                record = fetch_page(client, title, lang)
            except httpx.HTTPError as exc:
                raise RuntimeError(f"fetching {title!r} failed: {exc}") from exc
            path = _page_file(out, record["title"])
            path.write_text(json.dumps(record, ensure_ascii=False, indent=1) + "\n", encoding="utf-8")
            written.append(path)
    return written
