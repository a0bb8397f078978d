"""Forbidden-phrase matching penalties.

Two complementary mechanisms guard the decoder. The hard side stores every
forbidden phrase as a token-id path in a trie and inspects the suffix of
the generated sequence: a complete phrase (or a partial overlap reaching
the block threshold) is assigned an infinite penalty, smaller overlaps a
linear one. The soft side embeds the most recently completed word and
compares it against the forbidden span embeddings by cosine similarity, so
near-synonyms that share no token ids are still caught.
"""

from __future__ import annotations

import math
import string
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import InvalidInput
from .embedding import Embedder, unit

INFINITE = math.inf


@dataclass
class HardMatchConfig:
    alpha_token: float = 1.0
    beta: int = 1
    # The published step rule scores a partial overlap of length L as
    # alpha*L only when 0 < L < beta and blocks at L >= beta. With
    # equation_literal=True the complete-phrase check is skipped and only
    # the L >= beta comparison applies (a complete phrase shorter than
    # beta then scores alpha*L). Both agree at beta=1.
    equation_literal: bool = False

    def __post_init__(self) -> None:
        if self.alpha_token < 0:
            raise InvalidInput("alpha_token must be non-negative")
        if self.beta < 1:
            raise InvalidInput("beta must be at least 1")


@dataclass
class SoftMatchConfig:
    alpha_sbert: float = 1.0
    # Cosine never exceeds 1, so delta > 1 together with alpha_sbert = 0
    # disables soft matching entirely (the ablation switch).
    delta: float = 0.5

    def __post_init__(self) -> None:
        if self.alpha_sbert < 0:
            raise InvalidInput("alpha_sbert must be non-negative")
        if self.delta <= 0.0:
            raise InvalidInput("delta must be positive")


class _Node:
    __slots__ = ("children", "terminal")

    def __init__(self) -> None:
        self.children: dict[int, _Node] = {}
        self.terminal = False


class PhraseTrie:
    """Token-id trie over forbidden phrases."""

    def __init__(self) -> None:
        self.root = _Node()
        self.max_depth = 0
        self.phrase_count = 0

    def insert(self, tokens: Sequence[int]) -> None:
        if not tokens:
            raise InvalidInput("cannot insert an empty phrase")
        node = self.root
        for t in tokens:
            t = int(t)
            if t < 0:
                raise InvalidInput(f"negative token id {t}")
            node = node.children.setdefault(t, _Node())
        if not node.terminal:
            node.terminal = True
            self.phrase_count += 1
        self.max_depth = max(self.max_depth, len(tokens))

    def _consume(self, tokens: Sequence[int]) -> Optional[_Node]:
        """Node reached by walking all of `tokens` from the root, if any."""
        node = self.root
        for t in tokens:
            node = node.children.get(int(t))
            if node is None:
                return None
        return node

    def contains(self, tokens: Sequence[int]) -> bool:
        node = self._consume(tokens)
        return node is not None and node.terminal


def build_trie(token_forms: Sequence[Sequence[int]]) -> PhraseTrie:
    trie = PhraseTrie()
    for form in token_forms:
        if form:
            trie.insert(form)
    return trie


def longest_matched_suffix(trie: PhraseTrie, tokens: Sequence[int]) -> tuple[int, bool]:
    """Longest suffix of `tokens` that is a prefix of some stored phrase.

    Returns (match length, complete); `complete` is true when some suffix
    equals an entire stored phrase. Suffixes longer than the deepest
    phrase cannot match, so at most `max_depth` of them are checked. Note
    the candidate lengths are independent: a matching suffix of length k
    says nothing about length k-1, hence the full scan.
    """
    seq = [int(t) for t in tokens]
    best_len = 0
    complete = False
    for k in range(1, min(len(seq), trie.max_depth) + 1):
        node = trie._consume(seq[len(seq) - k :])
        if node is None:
            continue
        best_len = k
        if node.terminal:
            complete = True
    return best_len, complete


def token_penalty(trie: PhraseTrie, tokens: Sequence[int], cfg: HardMatchConfig) -> float:
    """Hard-match penalty for the sequence ending at its last token.

    INFINITE when a forbidden phrase is fully covered or the longest
    suffix overlap reaches `beta`; proportional to the overlap length
    below that; zero when nothing matches.
    """
    length, complete = longest_matched_suffix(trie, tokens)
    if not cfg.equation_literal and complete:
        return INFINITE
    if length >= cfg.beta:
        return INFINITE
    if length > 0:
        return cfg.alpha_token * length
    return 0.0


_PUNCT = string.punctuation


def last_word(text: str) -> str:
    """Final whitespace-delimited word, stripped of surrounding punctuation."""
    parts = text.split()
    if not parts:
        return ""
    return parts[-1].strip(_PUNCT)


class SemanticMatcher:
    """Caches forbidden-span embeddings and per-word penalties for a decode."""

    def __init__(self, spans: Sequence[str], embedder: Embedder, cfg: SoftMatchConfig) -> None:
        self.cfg = cfg
        self._embedder = embedder
        self._span_units: list[np.ndarray] = []
        for s in spans:
            if s.strip():
                try:
                    self._span_units.append(unit(embedder.embed_text(s)))
                except InvalidInput:
                    continue
        self._word_cache: dict[str, float] = {}

    def penalty(self, word: str) -> float:
        w = word.strip().lower()
        if not w or not self._span_units:
            return 0.0
        hit = self._word_cache.get(w)
        if hit is not None:
            return hit
        try:
            wv = unit(self._embedder.embed_text(w))
        except InvalidInput:
            self._word_cache[w] = 0.0
            return 0.0
        best = max(float(np.dot(wv, sv)) for sv in self._span_units)
        if best >= self.cfg.delta:
            pen = INFINITE
        elif best > 0.0:
            pen = self.cfg.alpha_sbert * best
        else:
            pen = 0.0
        self._word_cache[w] = pen
        return pen


def semantic_penalty(
    word: Optional[str],
    spans: Sequence[str],
    embedder: Embedder,
    cfg: SoftMatchConfig,
) -> float:
    """Soft-match penalty for one completed word against forbidden spans.

    The maximum cosine similarity s* between the word and any span is
    INFINITE-blocking at s* >= delta and scores alpha * s* below that
    (clamped at zero for anti-correlated words). A `word` of None means
    no word was completed this step, which costs nothing.
    """
    if word is None or not word.strip():
        return 0.0
    return SemanticMatcher(spans, embedder, cfg).penalty(word)
