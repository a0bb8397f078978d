"""Penalized beam search.

Each step extends every live beam by candidate tokens. An extension's step
cost is the token's negative log-probability plus the combined matching
penalty of the resulting sequence; an infinite penalty (or a
zero-probability transition) removes the extension outright rather than
assigning it a large finite cost, so blocked phrases can never ride along
in a beam. Beams are ranked by cumulative cost with a deterministic
tie-break, and a beam that emits the end token is frozen but keeps
competing for the final ranking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import InvalidInput, LanguageModel, NEG_INF_LOGIT, Tokenizer
from .embedding import Embedder
from .matching import (
    INFINITE,
    HardMatchConfig,
    PhraseTrie,
    SemanticMatcher,
    SoftMatchConfig,
    semantic_penalty,
    token_penalty,
)

# Logprobs at or below this come from the impossible-transition sentinel;
# the step is dropped the same way an infinite penalty is.
_ZERO_PROB_CUTOFF = 0.5 * NEG_INF_LOGIT


@dataclass
class DecodeConfig:
    eos_token: int
    beam_width: int = 7
    max_new_tokens: int = 32
    # Top-m expansions considered per live beam before penalties apply.
    # None means beam_width; pass the vocab size for exhaustive expansion.
    expansion_fanout: Optional[int] = None
    hard: HardMatchConfig = field(default_factory=HardMatchConfig)
    soft: SoftMatchConfig = field(default_factory=SoftMatchConfig)

    def __post_init__(self) -> None:
        if self.beam_width < 1:
            raise InvalidInput("beam_width must be at least 1")
        if self.max_new_tokens < 1:
            raise InvalidInput("max_new_tokens must be at least 1")
        if self.expansion_fanout is None:
            self.expansion_fanout = self.beam_width
        if self.expansion_fanout < 1:
            raise InvalidInput("expansion_fanout must be at least 1")
        if self.eos_token < 0:
            raise InvalidInput("eos_token must be a valid token id")


@dataclass(frozen=True)
class BeamCandidate:
    tokens: tuple[int, ...]  # generated tokens only, prompt excluded
    cumulative_cost: float
    finished: bool
    last_step_penalty: float
    cost_history: tuple[float, ...]


@dataclass
class DecodeResult:
    best: tuple[int, ...]
    all_beams: list[BeamCandidate]
    steps_taken: int
    pruned_count: int
    fully_blocked: bool
    best_cost: float


def total_penalty(
    tokens: Sequence[int],
    completed: Optional[str],
    trie: PhraseTrie,
    spans: Sequence[str],
    embedder: Embedder,
    hard: HardMatchConfig,
    soft: SoftMatchConfig,
) -> float:
    """Hard plus soft penalty for a sequence whose newest token completed
    `completed` (None when no word was finished). Infinite absorbs."""
    p = token_penalty(trie, tokens, hard)
    if math.isinf(p):
        return INFINITE
    s = semantic_penalty(completed, spans, embedder, soft)
    if math.isinf(s):
        return INFINITE
    return p + s


def step_cost(logprob: float, penalty: float) -> Optional[float]:
    """Cost of one extension, or None when the extension must be dropped."""
    if math.isinf(penalty):
        return None
    if logprob <= _ZERO_PROB_CUTOFF:
        return None
    return -float(logprob) + float(penalty)


def decode(
    model: LanguageModel,
    tokenizer: Tokenizer,
    prompt_tokens: Sequence[int],
    trie: PhraseTrie,
    spans: Sequence[str],
    embedder: Embedder,
    cfg: DecodeConfig,
) -> DecodeResult:
    """Run penalized beam search after `prompt_tokens`.

    Matching penalties are computed over generated tokens only; the
    prompt is context for the model but is not itself subject to
    blocking. Ties in cumulative cost break toward finished beams, then
    lower token id, then lower parent beam index, which makes the search
    fully deterministic.
    """
    if cfg.eos_token >= model.vocab_size:
        raise InvalidInput("eos_token outside model vocabulary")
    prompt = [int(t) for t in prompt_tokens]
    matcher = SemanticMatcher(spans, embedder, cfg.soft)
    vocab = model.vocab_size
    fanout = min(cfg.expansion_fanout, vocab)

    live: list[BeamCandidate] = [BeamCandidate((), 0.0, False, 0.0, ())]
    finished: list[BeamCandidate] = []
    pruned = 0
    steps = 0

    for _ in range(cfg.max_new_tokens):
        if not live:
            break
        steps += 1
        # key: (cumulative cost, token id, parent index); carried finished
        # beams use token id -1 so they win exact ties against extensions.
        pool: list[tuple[tuple[float, int, int], BeamCandidate]] = []
        for idx, cand in enumerate(finished):
            pool.append(((cand.cumulative_cost, -1, idx), cand))
        for parent_idx, cand in enumerate(live):
            ctx = prompt + list(cand.tokens)
            logprobs = model.next_token_logprobs(ctx)
            if fanout < vocab:
                token_ids = np.argsort(-logprobs, kind="stable")[:fanout]
            else:
                token_ids = range(vocab)
            for t in token_ids:
                t = int(t)
                seq = cand.tokens + (t,)
                pen = token_penalty(trie, seq, cfg.hard)
                if math.isinf(pen):
                    pruned += 1
                    continue
                word = tokenizer.completed_word(ctx, t)
                if word is not None:
                    soft = matcher.penalty(word)
                    if math.isinf(soft):
                        pruned += 1
                        continue
                    pen += soft
                cost = step_cost(logprobs[t], pen)
                if cost is None:
                    pruned += 1
                    continue
                nxt = BeamCandidate(
                    tokens=seq,
                    cumulative_cost=cand.cumulative_cost + cost,
                    finished=(t == cfg.eos_token),
                    last_step_penalty=pen,
                    cost_history=cand.cost_history + (cost,),
                )
                pool.append(((nxt.cumulative_cost, t, parent_idx), nxt))
        pool.sort(key=lambda item: item[0])
        kept = [cand for _, cand in pool[: cfg.beam_width]]
        live = [c for c in kept if not c.finished]
        finished = [c for c in kept if c.finished]

    survivors = sorted(
        finished + live, key=lambda c: (c.cumulative_cost, not c.finished, c.tokens)
    )
    if not survivors:
        return DecodeResult(
            best=(),
            all_beams=[],
            steps_taken=steps,
            pruned_count=pruned,
            fully_blocked=True,
            best_cost=INFINITE,
        )
    pick_from = finished if finished else survivors
    best = min(pick_from, key=lambda c: (c.cumulative_cost, c.tokens))
    return DecodeResult(
        best=best.tokens,
        all_beams=survivors,
        steps_taken=steps,
        pruned_count=pruned,
        fully_blocked=False,
        best_cost=best.cumulative_cost,
    )
