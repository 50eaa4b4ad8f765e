"""Cosine-similarity retrieval over a precomputed embedding matrix.

The matrix is interchanged as UTF-8 JSON lines: a header object
``{"dimension": d, "model": tag}`` followed by one
``{"surface": ..., "term_id": ..., "vector": [...]}`` object per row.
Retrieval is an exact exhaustive scan with per-term-id deduplication;
no approximate indexing.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class MatrixFormatError(ValueError):
    """Embedding file violates the JSON-lines matrix format."""


@dataclass
class EmbeddingRow:
    surface: str
    term_id: str
    vector: np.ndarray


@dataclass
class Candidate:
    term_id: str
    surface: str
    score: float


class EmbeddingMatrix:
    """Dense row matrix over (surface, term id) pairs, immutable after load."""

    def __init__(self, dimension: int, model_tag: str, rows: list[EmbeddingRow]):
        self.dimension = dimension
        self.model_tag = model_tag
        self.rows = rows
        if rows:
            self._matrix = np.stack([r.vector for r in rows])
            self._norms = np.linalg.norm(self._matrix, axis=1)
        else:
            self._matrix = np.zeros((0, dimension))
            self._norms = np.zeros(0)

    def __len__(self) -> int:
        return len(self.rows)

    def vector_for(self, surface: str) -> np.ndarray | None:
        """First row vector whose surface matches (case/space-insensitive)."""
        key = surface.strip().lower()
        for row in self.rows:
            if row.surface.strip().lower() == key:
                return row.vector
        return None


def load_matrix(source: str | Path) -> EmbeddingMatrix:
    """Load and validate a JSON-lines embedding matrix file."""
    path = Path(source)
    rows: list[EmbeddingRow] = []
    seen: set[tuple[str, str]] = set()
    header = None

    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MatrixFormatError(f"line {lineno}: invalid JSON: {exc}") from exc
            if header is None:
                if "dimension" not in obj or "model" not in obj:
                    raise MatrixFormatError(
                        "first line must be a header with 'dimension' and 'model'"
                    )
                dimension = int(obj["dimension"])
                if dimension < 1:
                    raise MatrixFormatError("dimension must be positive")
                header = (dimension, str(obj["model"]))
                continue

            dimension = header[0]
            try:
                surface = obj["surface"]
                term_id = obj["term_id"]
                vector = obj["vector"]
            except KeyError as exc:
                raise MatrixFormatError(f"line {lineno}: missing field {exc}") from exc
            if len(vector) != dimension:
                raise MatrixFormatError(
                    f"line {lineno}: vector has dimension {len(vector)}, "
                    f"expected {dimension}"
                )
            arr = np.asarray(vector, dtype=float)
            if not np.all(np.isfinite(arr)):
                raise MatrixFormatError(f"line {lineno}: non-finite component")
            key = (surface, term_id)
            if key in seen:
                raise MatrixFormatError(
                    f"line {lineno}: duplicate (surface, term_id) pair {key}"
                )
            seen.add(key)
            rows.append(EmbeddingRow(surface=surface, term_id=term_id, vector=arr))

    if header is None:
        raise MatrixFormatError("empty file: header record required")
    return EmbeddingMatrix(dimension=header[0], model_tag=header[1], rows=rows)


def cosine(u, v) -> float:
    """Cosine of two equal-dimension vectors; 0.0 if either norm is zero."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    if u.size == 0:
        raise ValueError("zero-dimensional vectors")
    # scale by the max component first so denormal vectors do not
    # underflow to a zero norm (cosine is scale-invariant)
    su = float(np.max(np.abs(u)))
    sv = float(np.max(np.abs(v)))
    if su == 0.0 or sv == 0.0:
        return 0.0
    u = u / su
    v = v / sv
    nu = math.sqrt(float(u @ u))
    nv = math.sqrt(float(v @ v))
    return float(u @ v) / (nu * nv)


def top_k_dedup(matrix: EmbeddingMatrix, query, k: int) -> list[Candidate]:
    """Top ``k`` rows by cosine against ``query``, one best row per term id.

    Ordering is by descending score, then lexicographic term id, then
    surface, so results are fully deterministic under score ties.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    q = np.asarray(query, dtype=float)
    if q.shape != (matrix.dimension,):
        raise ValueError(
            f"query dimension {q.shape} does not match matrix ({matrix.dimension},)"
        )
    if not matrix.rows:
        return []

    qnorm = float(np.linalg.norm(q))
    if qnorm == 0.0:
        scores = np.zeros(len(matrix.rows))
    else:
        denom = matrix._norms * qnorm
        dots = matrix._matrix @ q
        scores = np.where(denom > 0.0, dots / np.where(denom == 0.0, 1.0, denom), 0.0)

    order = sorted(
        range(len(matrix.rows)),
        key=lambda i: (-scores[i], matrix.rows[i].term_id, matrix.rows[i].surface),
    )
    best: list[Candidate] = []
    taken: set[str] = set()
    for i in order:
        row = matrix.rows[i]
        if row.term_id in taken:
            continue
        taken.add(row.term_id)
        best.append(Candidate(term_id=row.term_id, surface=row.surface,
                              score=float(scores[i])))
        if len(best) == k:
            break
    return best
