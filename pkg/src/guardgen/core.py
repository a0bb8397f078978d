"""Core types and toy deterministic backends.

Everything downstream (matching, decoding, metrics) is written against two
small protocols: a language model that maps a token context to a full
next-token log-probability vector, and a whitespace tokenizer. The toy
implementations here are exact and seedless so tests can enumerate every
outcome by hand.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional, Protocol, Sequence

import numpy as np

# Logit value standing in for "impossible transition". exp(-1e9) underflows
# to exactly 0.0, so probability-space invariants still hold.
NEG_INF_LOGIT = -1e9

UNK_ID = 0


class InvalidInput(ValueError):
    """Raised when a caller hands us data that violates a documented contract."""


class LanguageModel(Protocol):
    @property
    def vocab_size(self) -> int: ...

    def next_token_logprobs(self, context: Sequence[int]) -> np.ndarray: ...


class Tokenizer(Protocol):
    @property
    def vocab_size(self) -> int: ...

    def tokenize(self, text: str) -> list[int]: ...

    def detokenize(self, tokens: Sequence[int]) -> str: ...

    def completed_word(self, prev: Sequence[int], next_id: int) -> Optional[str]: ...


class Split(str, Enum):
    FORGET = "forget"
    RETAIN = "retain"
    HOLDOUT = "holdout"


@dataclass(frozen=True)
class Prompt:
    text: str
    prompt_id: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise InvalidInput("prompt text must be non-empty")


@dataclass(frozen=True)
class QAPair:
    question: str
    answer: str
    split: Split

    def __post_init__(self) -> None:
        if not self.question.strip():
            raise InvalidInput("question must be non-empty")
        if not self.answer.strip():
            raise InvalidInput("answer must be non-empty")
        if not isinstance(self.split, Split):
            object.__setattr__(self, "split", Split(self.split))


def _validate_context(context: Sequence[int], vocab_size: int) -> None:
    for t in context:
        if not (0 <= int(t) < vocab_size):
            raise InvalidInput(f"token id {t} outside vocabulary of size {vocab_size}")


class UniformModel:
    """Assigns probability 1/V to every token in every context."""

    def __init__(self, vocab_size: int) -> None:
        if vocab_size < 1:
            raise InvalidInput("vocab_size must be positive")
        self._vocab_size = vocab_size
        self._row = np.full(vocab_size, -math.log(vocab_size), dtype=np.float64)
        self._row.setflags(write=False)

    @property
    def vocab_size(self) -> int:
        return self._vocab_size

    def next_token_logprobs(self, context: Sequence[int]) -> np.ndarray:
        _validate_context(context, self._vocab_size)
        return self._row


class BigramModel:
    """Next-token distribution conditioned on the last context token only.

    Rows are given as {prev: {next: prob}}; each present row must sum to
    1 within 1e-6. Transitions absent from a row get the NEG_INF_LOGIT
    sentinel. Empty context, or a previous token with no row, falls back
    to the uniform distribution.
    """

    def __init__(self, vocab_size: int, table: dict[int, dict[int, float]]) -> None:
        if vocab_size < 1:
            raise InvalidInput("vocab_size must be positive")
        self._vocab_size = vocab_size
        self._uniform = np.full(vocab_size, -math.log(vocab_size), dtype=np.float64)
        self._uniform.setflags(write=False)
        self._rows: dict[int, np.ndarray] = {}
        for prev, nexts in table.items():
            if not (0 <= prev < vocab_size):
                raise InvalidInput(f"bigram prev id {prev} outside vocabulary")
            if not nexts:
                raise InvalidInput(f"bigram row for {prev} is empty")
            row = np.full(vocab_size, NEG_INF_LOGIT, dtype=np.float64)
            total = 0.0
            for nxt, p in nexts.items():
                if not (0 <= nxt < vocab_size):
                    raise InvalidInput(f"bigram next id {nxt} outside vocabulary")
                if not (0.0 < p <= 1.0):
                    raise InvalidInput(f"bigram prob {p} for ({prev},{nxt}) not in (0,1]")
                row[nxt] = math.log(p)
                total += p
            if abs(total - 1.0) > 1e-6:
                raise InvalidInput(f"bigram row for {prev} sums to {total}, expected 1")
            row.setflags(write=False)
            self._rows[prev] = row

    @property
    def vocab_size(self) -> int:
        return self._vocab_size

    def next_token_logprobs(self, context: Sequence[int]) -> np.ndarray:
        _validate_context(context, self._vocab_size)
        if not context:
            return self._uniform
        return self._rows.get(int(context[-1]), self._uniform)

    @classmethod
    def from_file(cls, path: str | Path, vocab_size: int) -> "BigramModel":
        """Parse a whitespace table of `prev next prob` lines.

        Blank lines and lines starting with '#' are skipped. A duplicate
        (prev, next) pair is an error.
        """
        table: dict[int, dict[int, float]] = {}
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise InvalidInput(f"{path}:{lineno}: expected `prev next prob`, got {raw!r}")
            try:
                prev, nxt, prob = int(parts[0]), int(parts[1]), float(parts[2])
            except ValueError as exc:
                raise InvalidInput(f"{path}:{lineno}: {exc}") from exc
            row = table.setdefault(prev, {})
            if nxt in row:
                raise InvalidInput(f"{path}:{lineno}: duplicate entry for ({prev}, {nxt})")
            row[nxt] = prob
        return cls(vocab_size, table)


class ToyTokenizer:
    """Whitespace tokenizer over a fixed lowercase vocabulary.

    Token id equals the word's line position in the vocab. Id 0 is the
    unknown slot: any word outside the vocabulary maps to it. Tokenize
    lowercases its input, so matching downstream is case-insensitive.
    """

    def __init__(self, tokens: Sequence[str]) -> None:
        if not tokens:
            raise InvalidInput("vocabulary must be non-empty")
        seen: set[str] = set()
        for tok in tokens:
            if not tok or tok != tok.strip() or any(c.isspace() for c in tok):
                raise InvalidInput(f"bad vocab entry {tok!r}")
            if tok != tok.lower():
                raise InvalidInput(f"vocab entry {tok!r} must be lowercase")
            if tok in seen:
                raise InvalidInput(f"duplicate vocab entry {tok!r}")
            seen.add(tok)
        self._tokens = list(tokens)
        self._ids = {tok: i for i, tok in enumerate(self._tokens)}

    @property
    def vocab_size(self) -> int:
        return len(self._tokens)

    def token_at(self, token_id: int) -> str:
        if not (0 <= token_id < len(self._tokens)):
            raise InvalidInput(f"token id {token_id} outside vocabulary")
        return self._tokens[token_id]

    def id_of(self, word: str) -> int:
        return self._ids.get(word.lower(), UNK_ID)

    def tokenize(self, text: str) -> list[int]:
        return [self._ids.get(w, UNK_ID) for w in text.lower().split()]

    def detokenize(self, tokens: Sequence[int]) -> str:
        return " ".join(self.token_at(int(t)) for t in tokens)

    def completed_word(self, prev: Sequence[int], next_id: int) -> Optional[str]:
        # One token is one whole word here, so every appended token
        # completes itself.
        return self.token_at(int(next_id))

    @classmethod
    def from_file(cls, path: str | Path) -> "ToyTokenizer":
        lines = Path(path).read_text().splitlines()
        return cls([ln.strip() for ln in lines if ln.strip()])


def load_vocab(path: str | Path) -> list[str]:
    return [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
