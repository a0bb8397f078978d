"""Text embeddings and pooling.

The production path pools hidden states from a served model; the toy
embedders here are deterministic functions of the text alone, which is all
the similarity-based components (gating, retrieval, soft matching) need.
"""

from __future__ import annotations

import hashlib
from typing import Mapping, Protocol, Sequence

import numpy as np

from .core import InvalidInput


class Embedder(Protocol):
    @property
    def dimension(self) -> int: ...

    def embed_text(self, text: str) -> np.ndarray: ...


def mean_pool(states: np.ndarray, mask: Sequence[int]) -> np.ndarray:
    """Average the rows of `states` selected by a 0/1 mask.

    `states` is (L, d); the mask must have length L, contain only 0s and
    1s, and select at least one row.
    """
    arr = np.asarray(states, dtype=np.float64)
    if arr.ndim != 2:
        raise InvalidInput(f"states must be 2-d, got shape {arr.shape}")
    m = np.asarray(mask, dtype=np.float64)
    if m.shape != (arr.shape[0],):
        raise InvalidInput(f"mask length {m.shape} does not match {arr.shape[0]} rows")
    if not np.all((m == 0.0) | (m == 1.0)):
        raise InvalidInput("mask entries must be 0 or 1")
    count = float(m.sum())
    if count == 0.0:
        raise InvalidInput("mask selects no rows")
    return (arr * m[:, None]).sum(axis=0) / count


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    x = np.asarray(a, dtype=np.float64).ravel()
    y = np.asarray(b, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise InvalidInput(f"dimension mismatch: {x.shape} vs {y.shape}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise InvalidInput("vectors must be finite")
    nx = float(np.linalg.norm(x))
    ny = float(np.linalg.norm(y))
    if nx == 0.0 or ny == 0.0:
        raise InvalidInput("cosine undefined for zero vector")
    return float(np.dot(x, y) / (nx * ny))


def _words(text: str) -> list[str]:
    ws = text.lower().split()
    if not ws:
        raise InvalidInput("cannot embed empty text")
    return ws


class BagOfWordsEmbedder:
    """Word-count vector over a fixed vocabulary; unknown words are ignored."""

    def __init__(self, vocab: Sequence[str]) -> None:
        if not vocab:
            raise InvalidInput("vocabulary must be non-empty")
        self._slots = {w.lower(): i for i, w in enumerate(vocab)}
        if len(self._slots) != len(vocab):
            raise InvalidInput("vocabulary entries must be unique (case-insensitive)")
        self._dim = len(vocab)

    @property
    def dimension(self) -> int:
        return self._dim

    def embed_text(self, text: str) -> np.ndarray:
        vec = np.zeros(self._dim, dtype=np.float64)
        for w in _words(text):
            slot = self._slots.get(w)
            if slot is not None:
                vec[slot] += 1.0
        return vec


class HashingEmbedder:
    """Signed feature hashing: no vocabulary needed, stable across runs."""

    def __init__(self, dimension: int = 64) -> None:
        if dimension < 2:
            raise InvalidInput("dimension must be at least 2")
        self._dim = dimension

    @property
    def dimension(self) -> int:
        return self._dim

    def _slot_and_sign(self, word: str) -> tuple[int, float]:
        digest = hashlib.blake2b(word.encode("utf-8"), digest_size=8).digest()
        value = int.from_bytes(digest, "big")
        return value % self._dim, 1.0 if (value >> 63) & 1 == 0 else -1.0

    def embed_text(self, text: str) -> np.ndarray:
        vec = np.zeros(self._dim, dtype=np.float64)
        for w in _words(text):
            slot, sign = self._slot_and_sign(w)
            vec[slot] += sign
        if not vec.any():
            # Sign cancellation would otherwise produce an un-comparable
            # zero vector; nudge a deterministic slot instead.
            slot, _ = self._slot_and_sign(" ".join(_words(text)))
            vec[slot] = 1.0
        return vec


class TableEmbedder:
    """Exact lookup table, used by tests to pin similarity geometry.

    A full (lowercased) text that appears in the table returns its vector
    directly. Otherwise the text's known words are summed; if none are
    known the embedding falls back to a small constant so cosine stays
    defined.
    """

    def __init__(self, table: Mapping[str, Sequence[float]]) -> None:
        if not table:
            raise InvalidInput("table must be non-empty")
        dims = {len(v) for v in table.values()}
        if len(dims) != 1:
            raise InvalidInput("table vectors must share one dimension")
        self._dim = dims.pop()
        self._table = {k.lower(): np.asarray(v, dtype=np.float64) for k, v in table.items()}

    @property
    def dimension(self) -> int:
        return self._dim

    def embed_text(self, text: str) -> np.ndarray:
        key = " ".join(_words(text))
        hit = self._table.get(key)
        if hit is not None:
            return hit.copy()
        vec = np.zeros(self._dim, dtype=np.float64)
        known = False
        for w in key.split():
            row = self._table.get(w)
            if row is not None:
                vec += row
                known = True
        if not known:
            vec[0] = 1e-8
        return vec


def unit(v: np.ndarray) -> np.ndarray:
    x = np.asarray(v, dtype=np.float64).ravel()
    n = float(np.linalg.norm(x))
    if n == 0.0:
        raise InvalidInput("cannot normalize zero vector")
    return x / n
