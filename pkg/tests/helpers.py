"""Shared oracles and fixture builders for the test suite.

Everything here is deliberately independent of the library internals it
checks: brute-force scans, exhaustive enumerations, and loop-based
re-computations that a reviewer can verify by eye.
"""

from __future__ import annotations

import itertools
import math
from typing import Optional, Sequence

import numpy as np

from guardgen.core import BigramModel, ToyTokenizer
from guardgen.matching import HardMatchConfig, token_penalty


def make_vocab(n_words: int, eos: str = "</s>") -> list[str]:
    """Synthetic vocabulary: <unk> at id 0, then w1..wN, then the eos."""
    return ["<unk>"] + [f"w{i}" for i in range(1, n_words + 1)] + [eos]


def random_bigram(
    rng: np.random.Generator,
    vocab_size: int,
    min_branch: int = 2,
    max_branch: int = 4,
    row_prob: float = 1.0,
) -> BigramModel:
    """Random bigram table; rows missing with prob 1-row_prob fall back
    to uniform inside the model."""
    table: dict[int, dict[int, float]] = {}
    for prev in range(vocab_size):
        if rng.random() > row_prob:
            continue
        branch = int(rng.integers(min_branch, max_branch + 1))
        branch = min(branch, vocab_size)
        nexts = rng.choice(vocab_size, size=branch, replace=False)
        probs = rng.dirichlet(np.ones(branch)) + 1e-9
        probs = probs / probs.sum()
        table[prev] = {int(t): float(p) for t, p in zip(nexts, probs)}
    if not table:
        table[0] = {0: 1.0}
    return BigramModel(vocab_size, table)


def contains_contiguous(haystack: Sequence[int], needle: Sequence[int]) -> bool:
    h = list(haystack)
    n = list(needle)
    if not n or len(n) > len(h):
        return False
    return any(h[i : i + len(n)] == n for i in range(len(h) - len(n) + 1))


def brute_force_suffix(
    phrases: Sequence[Sequence[int]], seq: Sequence[int]
) -> tuple[int, bool]:
    """Reference for longest_matched_suffix: compare every suffix of seq
    against every stored phrase's prefixes; complete when any suffix
    equals an entire phrase."""
    s = [int(t) for t in seq]
    stored = [list(p) for p in phrases if p]
    best = 0
    complete = False
    for k in range(1, len(s) + 1):
        suffix = s[len(s) - k :]
        for phrase in stored:
            if len(phrase) >= k and phrase[:k] == suffix:
                best = max(best, k)
            if phrase == suffix:
                complete = True
    return best, complete


def exhaustive_best(
    model,
    tokenizer: ToyTokenizer,
    prompt: Sequence[int],
    eos: int,
    max_new: int,
    hard: HardMatchConfig,
    trie,
    soft_penalty_fn=None,
) -> tuple[Optional[tuple[int, ...]], float]:
    """Global minimum cumulative cost over every legal hypothesis.

    Enumerates all sequences up to max_new tokens in which eos can only
    be final; a hypothesis dies when any step has an infinite penalty or
    an impossible transition. Finished hypotheses (ending in eos) beat
    unfinished ones; ties break on the token tuple. Returns
    (tokens, cost) or (None, inf) when everything is blocked.
    """
    vocab = model.vocab_size
    prompt = [int(t) for t in prompt]
    best_fin: Optional[tuple[tuple[int, ...], float]] = None
    best_live: Optional[tuple[tuple[int, ...], float]] = None

    def consider(tokens: tuple[int, ...], cost: float, finished: bool) -> None:
        nonlocal best_fin, best_live
        slot = (tokens, cost)
        if finished:
            if best_fin is None or (cost, tokens) < (best_fin[1], best_fin[0]):
                best_fin = slot
        else:
            if best_live is None or (cost, tokens) < (best_live[1], best_live[0]):
                best_live = slot

    def walk(tokens: tuple[int, ...], cost: float) -> None:
        if len(tokens) == max_new:
            consider(tokens, cost, finished=False)
            return
        logprobs = model.next_token_logprobs(prompt + list(tokens))
        for t in range(vocab):
            lp = float(logprobs[t])
            if lp <= -1e8:
                continue
            seq = tokens + (t,)
            pen = token_penalty(trie, seq, hard)
            if math.isinf(pen):
                continue
            if soft_penalty_fn is not None:
                word = tokenizer.completed_word(prompt + list(tokens), t)
                if word is not None:
                    sp = soft_penalty_fn(word)
                    if math.isinf(sp):
                        continue
                    pen += sp
            step = -lp + pen
            if t == eos:
                consider(seq, cost + step, finished=True)
            else:
                walk(seq, cost + step)

    walk((), 0.0)
    if best_fin is not None:
        return best_fin
    if best_live is not None:
        return best_live
    return None, math.inf


def greedy_oracle(model, prompt: Sequence[int], eos: int, max_new: int) -> list[int]:
    """Plain argmax loop; emitted tokens include the terminating eos."""
    context = [int(t) for t in prompt]
    out: list[int] = []
    for _ in range(max_new):
        t = int(np.argmax(model.next_token_logprobs(context)))
        out.append(t)
        context.append(t)
        if t == eos:
            break
    return out


def lcs_oracle(a: Sequence[str], b: Sequence[str]) -> int:
    """Quadratic LCS without the DP-table reuse of the library version."""
    if not a or not b:
        return 0
    best = 0
    # longest common subsequence by explicit subsequence enumeration is
    # exponential; use the textbook recursive definition with a cache.
    from functools import lru_cache

    @lru_cache(maxsize=None)
    def rec(i: int, j: int) -> int:
        if i == len(a) or j == len(b):
            return 0
        if a[i] == b[j]:
            return 1 + rec(i + 1, j + 1)
        return max(rec(i + 1, j), rec(i, j + 1))

    best = rec(0, 0)
    rec.cache_clear()
    return best


def ks_permutation_pvalue(
    x: np.ndarray, y: np.ndarray, n_perms: int, rng: np.random.Generator
) -> float:
    """Monte Carlo permutation p-value for the two-sample KS statistic."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, m = len(x), len(y)
    combined = np.concatenate([x, y])
    grid = np.sort(combined)
    # indicator[i, j] = combined[i] <= grid[j]
    indicator = (combined[:, None] <= grid[None, :]).astype(np.float64)

    def stat(member: np.ndarray) -> np.ndarray:
        fx = (member @ indicator) / n
        fy = ((1.0 - member) @ indicator) / m
        return np.max(np.abs(fx - fy), axis=1)

    observed = stat(np.concatenate([np.ones(n), np.zeros(m)])[None, :])[0]
    members = np.zeros((n_perms, n + m))
    for i in range(n_perms):
        pick = rng.permutation(n + m)[:n]
        members[i, pick] = 1.0
    d = stat(members)
    return float(np.mean(d >= observed - 1e-12))


def all_toy_sequences(vocab_size: int, max_len: int):
    """Every token sequence up to max_len (used by small exhaustive scans)."""
    for length in range(1, max_len + 1):
        yield from itertools.product(range(vocab_size), repeat=length)
