"""Forbidden-span extraction from retrieved answers.

Given the answer text a forget-routed prompt retrieved, these strategies
decide which spans the decoder must not produce. Spans are kept both as
surface text (for semantic matching) and as token-id forms (for the
trie).
"""

from __future__ import annotations

import logging
import string
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .core import InvalidInput, LanguageModel, Tokenizer

logger = logging.getLogger(__name__)


class ExtractionError(RuntimeError):
    """An extraction strategy failed; carries which strategy and why."""


class StrategyKind(str, Enum):
    EXTERNAL = "external"
    ALL_WORDS = "all_words"
    HALF_WORDS = "half_words"
    CONFIDENCE_BASED = "confidence_based"


@dataclass(frozen=True)
class ForbiddenSet:
    spans: tuple[str, ...]
    token_forms: tuple[tuple[int, ...], ...]

    def __post_init__(self) -> None:
        if len(self.spans) != len(self.token_forms):
            raise InvalidInput("spans and token_forms must align")

    def __len__(self) -> int:
        return len(self.spans)

    @classmethod
    def from_spans(cls, spans: Sequence[str], tokenizer: Tokenizer) -> "ForbiddenSet":
        """Clean, dedupe (case-insensitive, first occurrence wins) and
        tokenize spans. Spans that tokenize to nothing are dropped."""
        kept: list[str] = []
        forms: list[tuple[int, ...]] = []
        seen: set[str] = set()
        for s in spans:
            text = s.strip()
            if not text:
                continue
            lowered = text.lower()
            if lowered in seen:
                continue
            tokens = tuple(tokenizer.tokenize(text))
            if not tokens:
                continue
            seen.add(lowered)
            kept.append(text)
            forms.append(tokens)
        return cls(spans=tuple(kept), token_forms=tuple(forms))


def merge(sets: Sequence[ForbiddenSet]) -> ForbiddenSet:
    spans: list[str] = []
    forms: list[tuple[int, ...]] = []
    seen: set[str] = set()
    for fs in sets:
        for span, form in zip(fs.spans, fs.token_forms):
            lowered = span.lower()
            if lowered in seen:
                continue
            seen.add(lowered)
            spans.append(span)
            forms.append(form)
    return ForbiddenSet(spans=tuple(spans), token_forms=tuple(forms))


def answer_words(answer: str) -> list[str]:
    """Whitespace words with surrounding punctuation stripped; empties dropped."""
    out = []
    for w in answer.split():
        w = w.strip(string.punctuation)
        if w:
            out.append(w)
    return out


def load_stopwords(path: str | Path) -> frozenset[str]:
    words = {ln.strip().lower() for ln in Path(path).read_text().splitlines() if ln.strip()}
    return frozenset(words)


def default_stopwords() -> frozenset[str]:
    text = resources.files("guardgen").joinpath("data/stopwords.txt").read_text()
    return frozenset(ln.strip().lower() for ln in text.splitlines() if ln.strip())


@dataclass
class ExtractionStrategy:
    kind: StrategyKind = StrategyKind.ALL_WORDS
    # confidence_based keeps a word when its teacher-forced probability
    # strictly exceeds tau and it is not a stopword.
    tau: float = 0.5
    stopwords: Optional[frozenset[str]] = None
    extractor: Optional[Callable[[str], Sequence[str]]] = None

    def __post_init__(self) -> None:
        if not isinstance(self.kind, StrategyKind):
            self.kind = StrategyKind(self.kind)
        if self.kind == StrategyKind.CONFIDENCE_BASED and not (0.0 <= self.tau < 1.0):
            raise InvalidInput("tau must be in [0, 1)")
        if self.kind == StrategyKind.EXTERNAL and self.extractor is None:
            raise InvalidInput("external strategy needs an extractor callable")


def _dedupe(words: Sequence[str]) -> list[str]:
    seen: set[str] = set()
    out: list[str] = []
    for w in words:
        lw = w.lower()
        if lw not in seen:
            seen.add(lw)
            out.append(w)
    return out


def _confidence_words(
    words: Sequence[str],
    tau: float,
    stop: frozenset[str],
    model: LanguageModel,
    tokenizer: Tokenizer,
) -> list[str]:
    """Teacher-force the answer and keep high-confidence content words.

    Each word is scored by the model probability of its first token given
    all preceding answer tokens. Raising tau can only shrink the result.
    """
    kept: list[str] = []
    context: list[int] = []
    for w in words:
        tokens = tokenizer.tokenize(w)
        if not tokens:
            continue
        logprobs = model.next_token_logprobs(context)
        prob = float(np.exp(logprobs[tokens[0]]))
        if prob > tau and w.lower() not in stop:
            kept.append(w)
        context.extend(tokens)
    return kept


def extract(
    answer: str,
    strategy: ExtractionStrategy,
    model: LanguageModel,
    tokenizer: Tokenizer,
) -> ForbiddenSet:
    """Produce the forbidden spans for one retrieved answer.

    all_words keeps every distinct word; half_words the first
    ceil(W/2) words; confidence_based the non-stopword words the model
    predicts with probability above tau; external delegates to a caller
    supplied function whose output is taken verbatim. An empty result is
    legal and leaves generation unconstrained.
    """
    if not answer.strip():
        raise InvalidInput("answer must be non-empty")
    words = answer_words(answer)
    if strategy.kind == StrategyKind.ALL_WORDS:
        spans = _dedupe(words)
    elif strategy.kind == StrategyKind.HALF_WORDS:
        half = (len(words) + 1) // 2
        spans = _dedupe(words[:half])
    elif strategy.kind == StrategyKind.CONFIDENCE_BASED:
        stop = strategy.stopwords if strategy.stopwords is not None else default_stopwords()
        spans = _confidence_words(words, strategy.tau, stop, model, tokenizer)
    elif strategy.kind == StrategyKind.EXTERNAL:
        assert strategy.extractor is not None
        try:
            raw = strategy.extractor(answer)
        except Exception as exc:
            raise ExtractionError(f"external extractor failed: {exc}") from exc
        if isinstance(raw, str) or not isinstance(raw, Sequence):
            raise ExtractionError("external extractor must return a sequence of spans")
        spans = _dedupe([str(s) for s in raw])
    else:  # pragma: no cover - enum is closed
        raise InvalidInput(f"unknown strategy {strategy.kind}")
    result = ForbiddenSet.from_spans(spans, tokenizer)
    if len(result) == 0:
        logger.warning("extraction (%s) produced no spans", strategy.kind.value)
    return result
