"""Independent reference implementations used as test oracles."""

from __future__ import annotations

import math
from decimal import ROUND_DOWN, Decimal


def brute_force_topk(ids, vectors, query, k):
    """Exhaustive cosine scan in plain Python floats; ties by ascending id."""
    q = [float(x) for x in query]
    qn = math.sqrt(math.fsum(x * x for x in q))
    scored = []
    for entry_id, vec in zip(ids, vectors):
        v = [float(x) for x in vec]
        vn = math.sqrt(math.fsum(x * x for x in v))
        if vn == 0.0:
            continue
        s = math.fsum(a * b for a, b in zip(v, q)) / (vn * qn)
        scored.append((max(-1.0, min(1.0, s)), entry_id))
    scored.sort(key=lambda t: (-t[0], t[1]))
    return scored[:k]


def reference_offsets(n: int, size: int, overlap: int) -> list[int]:
    if n == 0:
        return []
    offsets = [0]
    while offsets[-1] + size < n:
        offsets.append(offsets[-1] + size - overlap)
    return offsets


def chunk_violations(text: str, chunks, size: int, overlap: int) -> list[str]:
    """Return the chunker properties that ``chunks`` breaks (empty when all hold)."""
    problems = []
    if not text:
        return [] if not chunks else ["non-empty output for empty text"]
    if not chunks:
        return ["no chunks for non-empty text"]
    rebuilt = chunks[0].text + "".join(c.text[overlap:] for c in chunks[1:])
    if rebuilt != text:
        problems.append("coverage")
    starts = [c.start_offset for c in chunks]
    if any(b - a != size - overlap for a, b in zip(starts, starts[1:])):
        problems.append("stride")
    if any(len(c.text) != size for c in chunks[:-1]):
        problems.append("interior length")
    last = chunks[-1]
    if not 0 < len(last.text) <= size or last.start_offset + len(last.text) != len(text):
        problems.append("last chunk bounds")
    if any(text[c.start_offset : c.start_offset + len(c.text)] != c.text for c in chunks):
        problems.append("not substrings")
    return problems


def truncated_mean(values) -> Decimal:
    vals = [Decimal(str(v)) for v in values]
    return (sum(vals) / len(vals)).quantize(Decimal("0.01"), rounding=ROUND_DOWN)
