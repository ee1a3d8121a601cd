"""Exact cosine top-k search over per-country embedding indexes.

Dot products and norms are computed as ``math.fsum`` over elementwise
float64 products. The result is correctly rounded and independent of BLAS
summation order, so a scan and a pair-by-pair loop give bit-identical scores.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Collection, Protocol, Sequence

import numpy as np

from culrag.kb_builder import KBEntry

logger = logging.getLogger(__name__)


class VectorStoreError(ValueError):
    pass


class DimensionError(VectorStoreError):
    pass


class Embedder(Protocol):
    def __call__(self, text: str) -> Sequence[float]: ...


def _as_vector(values: Sequence[float]) -> np.ndarray:
    vec = np.asarray(values, dtype=np.float64)
    if vec.ndim != 1:
        raise VectorStoreError("vector must be one-dimensional")
    if not np.all(np.isfinite(vec)):
        raise VectorStoreError("vector has non-finite values")
    return vec


def _norm(vec: np.ndarray) -> float:
    return math.sqrt(math.fsum(vec * vec))


def cosine(a: Sequence[float], b: Sequence[float]) -> float:
    a, b = _as_vector(a), _as_vector(b)
    if a.shape != b.shape:
        raise DimensionError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    na, nb = _norm(a), _norm(b)
    if na == 0.0 or nb == 0.0:
        raise VectorStoreError("cosine undefined for a zero vector")
    return max(-1.0, min(1.0, math.fsum(a * b) / (na * nb)))


@dataclass(frozen=True)
class ScoredHit:
    entry_id: str
    score: float
    rank: int


@dataclass
class VectorIndex:
    kb_id: str
    dimension: int
    ids: list[str]
    vectors: np.ndarray  # float32, shape (len(ids), dimension)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.vectors = np.asarray(self.vectors, dtype=np.float32).reshape(len(self.ids), self.dimension)
        if len(set(self.ids)) != len(self.ids):
            raise VectorStoreError(f"index {self.kb_id}: duplicate entry ids")
        for entry_id in self.ids:
            if "\n" in entry_id or "\r" in entry_id:
                raise VectorStoreError(f"entry id {entry_id!r} contains a line break")
        rows = self.vectors.astype(np.float64)
        self._rows = rows
        self._norms = np.array([_norm(r) for r in rows])
        self._position = {entry_id: i for i, entry_id in enumerate(self.ids)}

    def __len__(self) -> int:
        return len(self.ids)

    def vector(self, entry_id: str) -> np.ndarray:
        return self.vectors[self._position[entry_id]]

    def search(self, query: Sequence[float], k: int, restrict: Collection[str] | None = None) -> list[ScoredHit]:
        return search(self, query, k, restrict)

    def save(self, directory: str | Path) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        meta = dict(self.metadata)
        meta.update(kb_id=self.kb_id, dimension=self.dimension, count=len(self.ids))
        (directory / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        (directory / "vectors.bin").write_bytes(self.vectors.astype("<f4").tobytes(order="C"))
        (directory / "ids.txt").write_text("".join(i + "\n" for i in self.ids), encoding="utf-8")
        return directory

    @classmethod
    def load(cls, directory: str | Path) -> VectorIndex:
        directory = Path(directory)
        meta = json.loads((directory / "meta.json").read_text(encoding="utf-8"))
        ids_text = (directory / "ids.txt").read_text(encoding="utf-8")
        ids = ids_text.split("\n")[:-1] if ids_text else []
        raw = np.frombuffer((directory / "vectors.bin").read_bytes(), dtype="<f4")
        dimension = int(meta["dimension"])
        if len(ids) != int(meta["count"]) or raw.size != len(ids) * dimension:
            raise VectorStoreError(f"index at {directory} is inconsistent with its meta.json")
        extra = {k: v for k, v in meta.items() if k not in ("kb_id", "dimension", "count")}
        return cls(meta["kb_id"], dimension, ids, raw.astype(np.float32).reshape(len(ids), dimension), extra)


def search(
    index: VectorIndex,
    query: Sequence[float],
    k: int,
    restrict: Collection[str] | None = None,
) -> list[ScoredHit]:
    """Return the ``k`` best hits by cosine, ties broken by ascending entry id.

    ``restrict`` limits the scan to the given entry ids. Rows with a zero
    vector are never returned.
    """
    if k <= 0:
        raise VectorStoreError("k must be positive")
    if not index.ids:
        return []
    q = _as_vector(query)
    if q.shape[0] != index.dimension:
        raise DimensionError(f"query dimension {q.shape[0]} != index dimension {index.dimension}")
    qn = _norm(q)
    if qn == 0.0:
        raise VectorStoreError("query is a zero vector")
    rows = range(len(index.ids)) if restrict is None else sorted(index._position[i] for i in restrict if i in index._position)

    products = index._rows * q
    scored = []
    for i in rows:
        norm = index._norms[i]
        if norm == 0.0:
            continue
        score = max(-1.0, min(1.0, math.fsum(products[i]) / (norm * qn)))
        scored.append((-score, index.ids[i]))
    scored.sort()
    return [ScoredHit(entry_id, -neg, rank) for rank, (neg, entry_id) in enumerate(scored[:k], start=1)]


def build_index(
    entries: Sequence[KBEntry],
    embed: Embedder | Callable[[str], Sequence[float]],
    kb_id: str,
    *,
    model_id: str = "",
    out_dir: str | Path | None = None,
) -> VectorIndex:
    """Embed ``entries`` in order and optionally persist the index to ``out_dir``."""
    rows: list[np.ndarray] = []
    dimension = None
    for position, entry in enumerate(entries, start=1):
        try:
            vec = _as_vector(embed(entry.text))
        except VectorStoreError as exc:
            raise VectorStoreError(f"bad embedding for entry {position} ({entry.id}): {exc}") from exc
        except Exception as exc:
            raise VectorStoreError(f"embedding failed for entry {position} ({entry.id}): {exc}") from exc
        if dimension is None:
            dimension = vec.shape[0]
        elif vec.shape[0] != dimension:
            raise DimensionError(f"dimension drift at entry {position}")
        rows.append(vec)
    dimension = dimension or 0
    matrix = np.vstack(rows).astype(np.float32) if rows else np.zeros((0, dimension), dtype=np.float32)
    index = VectorIndex(
        kb_id=kb_id,
        dimension=dimension,
        ids=[e.id for e in entries],
        vectors=matrix,
        metadata={"model_id": model_id, "built_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())},
    )
    if out_dir is not None:
        index.save(out_dir)
        logger.info("indexed %d entries for %s", len(index), kb_id)
    return index
