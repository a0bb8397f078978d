"""Nearest-record retrieval over the forget set.

A forget-routed prompt is matched to the stored record whose keyed text
(answer by default) has the highest cosine similarity with the prompt
embedding. An optional second stage rescores the top k candidates with a
pairwise reranker. Ties always resolve to the lowest record position, so
retrieval is deterministic.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .core import InvalidInput, QAPair, Split
from .embedding import Embedder

logger = logging.getLogger(__name__)

# Pairwise relevance scorer: (query text, record text) -> score.
Reranker = Callable[[str, str], float]


@dataclass
class AnswerIndex:
    records: list[QAPair]
    vectors: np.ndarray  # (len(records), dim)
    key: str  # "answer" or "question"

    def __post_init__(self) -> None:
        if self.key not in ("answer", "question"):
            raise InvalidInput(f"index key must be answer or question, got {self.key!r}")
        if len(self.records) == 0:
            raise InvalidInput("index must contain at least one record")
        if self.vectors.shape[0] != len(self.records):
            raise InvalidInput("vector count does not match record count")

    def key_text(self, position: int) -> str:
        rec = self.records[position]
        return rec.answer if self.key == "answer" else rec.question


def build_index(
    records: Sequence[QAPair], embedder: Embedder, key: str = "answer"
) -> AnswerIndex:
    """Embed the keyed text of every forget-split record."""
    kept = [r for r in records if r.split == Split.FORGET]
    if not kept:
        raise InvalidInput("no forget-split records to index")
    texts = [r.answer if key == "answer" else r.question for r in kept]
    vectors = np.stack([embedder.embed_text(t) for t in texts])
    return AnswerIndex(records=kept, vectors=vectors, key=key)


def _similarities(index: AnswerIndex, query: np.ndarray) -> np.ndarray:
    """Cosine similarity per record; zero-norm rows or queries score 0."""
    q = np.asarray(query, dtype=np.float64).ravel()
    if q.shape[0] != index.vectors.shape[1]:
        raise InvalidInput("query dimension does not match index")
    qn = float(np.linalg.norm(q))
    norms = np.linalg.norm(index.vectors, axis=1)
    sims = np.zeros(len(index.records), dtype=np.float64)
    if qn == 0.0:
        return sims
    ok = norms > 0.0
    sims[ok] = (index.vectors[ok] @ q) / (norms[ok] * qn)
    return sims


def top1_position(index: AnswerIndex, query_text: str, embedder: Embedder) -> int:
    sims = _similarities(index, embedder.embed_text(query_text))
    return int(np.argmax(sims))  # argmax takes the lowest position on ties


def retrieve_top1(index: AnswerIndex, query_text: str, embedder: Embedder) -> QAPair:
    return index.records[top1_position(index, query_text, embedder)]


def rerank_position(
    index: AnswerIndex,
    query_text: str,
    embedder: Embedder,
    reranker: Reranker,
    k: int = 5,
) -> int:
    """Two-stage retrieval: cosine shortlist of size k, then rerank."""
    if k < 1:
        raise InvalidInput("rerank k must be at least 1")
    if k > len(index.records):
        logger.info("rerank k=%d clamped to %d records", k, len(index.records))
        k = len(index.records)
    sims = _similarities(index, embedder.embed_text(query_text))
    shortlist = np.argsort(-sims, kind="stable")[:k]  # stable: ties keep low positions
    best_pos = int(shortlist[0])
    best_score = None
    for pos in shortlist:
        score = float(reranker(query_text, index.key_text(int(pos))))
        if best_score is None or score > best_score:
            best_score = score
            best_pos = int(pos)
    return best_pos


def retrieve_rerank(
    index: AnswerIndex,
    query_text: str,
    embedder: Embedder,
    reranker: Reranker,
    k: int = 5,
) -> QAPair:
    return index.records[rerank_position(index, query_text, embedder, reranker, k)]


class CosineReranker:
    """Deterministic reranker built from any embedder."""

    def __init__(self, embedder: Embedder) -> None:
        self._embedder = embedder

    def __call__(self, query_text: str, record_text: str) -> float:
        a = self._embedder.embed_text(query_text)
        b = self._embedder.embed_text(record_text)
        na = float(np.linalg.norm(a))
        nb = float(np.linalg.norm(b))
        if na == 0.0 or nb == 0.0:
            return 0.0
        return float(np.dot(a, b) / (na * nb))


def save_index(index: AnswerIndex, path: str | Path) -> None:
    payload = {
        "key": index.key,
        "records": [
            {"question": r.question, "answer": r.answer, "split": r.split.value}
            for r in index.records
        ],
        "vectors": index.vectors.tolist(),
    }
    Path(path).write_text(json.dumps(payload))


def load_index(path: str | Path) -> AnswerIndex:
    try:
        payload = json.loads(Path(path).read_text())
        records = [
            QAPair(question=r["question"], answer=r["answer"], split=Split(r["split"]))
            for r in payload["records"]
        ]
        vectors = np.asarray(payload["vectors"], dtype=np.float64)
        key = payload["key"]
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise InvalidInput(f"cannot load index from {path}: {exc}") from exc
    return AnswerIndex(records=records, vectors=vectors, key=key)
