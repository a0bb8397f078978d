"""Evaluation metrics for unlearning quality and utility.

Text overlap (ROUGE-L, BLEU) and model-probability metrics (normalized
conditional probability, probability ratio, truth ratio, min-k) feed
three aggregate views: forget quality (a two-sample KS test p-value over
truth ratios), model utility (a harmonic mean over facet scores), and
privacy leakage (a relative AUC gap between member and non-member score
distributions).

All word-level metrics share one normalization: lowercase whitespace
words with surrounding punctuation stripped.
"""

from __future__ import annotations

import logging
import math
import string
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import InvalidInput, LanguageModel, QAPair, Tokenizer

logger = logging.getLogger(__name__)

_KS_TERMS = 100
_KS_TOL = 1e-10
PROBABILITY_FLOOR = 1e-12


def metric_words(text: str) -> list[str]:
    out = []
    for w in text.lower().split():
        w = w.strip(string.punctuation)
        if w:
            out.append(w)
    return out


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    """Longest common subsequence length, O(len(a) * len(b))."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            if x == y:
                cur.append(prev[j - 1] + 1)
            else:
                cur.append(max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


@dataclass(frozen=True)
class RougeScores:
    recall: float
    precision: float
    f1: float


def rouge_l(reference: str, hypothesis: str) -> RougeScores:
    """LCS-based overlap. Recall divides by the reference length, which is
    the side that must be non-empty."""
    ref = metric_words(reference)
    hyp = metric_words(hypothesis)
    if not ref:
        raise InvalidInput("reference must contain at least one word")
    if not hyp:
        return RougeScores(0.0, 0.0, 0.0)
    lcs = lcs_length(ref, hyp)
    recall = lcs / len(ref)
    precision = lcs / len(hyp)
    f1 = 0.0 if lcs == 0 else 2.0 * precision * recall / (precision + recall)
    return RougeScores(recall=recall, precision=precision, f1=f1)


def rouge_l_recall(reference: str, hypothesis: str) -> float:
    return rouge_l(reference, hypothesis).recall


def _ngram_counts(words: Sequence[str], n: int) -> Counter:
    return Counter(tuple(words[i : i + n]) for i in range(len(words) - n + 1))


def bleu(reference: str, hypothesis: str, max_n: int = 4, epsilon: float = 1e-9) -> float:
    """Clipped n-gram precision BLEU with epsilon smoothing.

    Zero (or impossible, when the hypothesis is shorter than n) n-gram
    precisions above n=1 are replaced by epsilon instead of zeroing the
    whole score; zero unigram overlap scores 0 outright. The brevity
    penalty exp(1 - r/c) applies when the hypothesis is shorter than
    the reference.
    """
    if max_n < 1:
        raise InvalidInput("max_n must be at least 1")
    ref = metric_words(reference)
    hyp = metric_words(hypothesis)
    if not ref:
        raise InvalidInput("reference must contain at least one word")
    if not hyp:
        return 0.0
    log_precisions = []
    for n in range(1, max_n + 1):
        total = len(hyp) - n + 1
        if total <= 0:
            log_precisions.append(math.log(epsilon))
            continue
        hyp_counts = _ngram_counts(hyp, n)
        ref_counts = _ngram_counts(ref, n)
        clipped = sum(min(c, ref_counts[g]) for g, c in hyp_counts.items())
        if clipped == 0 and n == 1:
            return 0.0  # no word overlap at all: no smoothing credit
        p = clipped / total if clipped > 0 else epsilon
        log_precisions.append(math.log(p))
    geo = math.exp(sum(log_precisions) / max_n)
    bp = 1.0 if len(hyp) >= len(ref) else math.exp(1.0 - len(ref) / len(hyp))
    return bp * geo


@dataclass(frozen=True)
class ScoredAnswer:
    question: str
    reference: str
    hypothesis: str
    bleu: float
    rouge: RougeScores

    @classmethod
    def score(
        cls, question: str, reference: str, hypothesis: str, max_n: int = 4
    ) -> "ScoredAnswer":
        return cls(
            question=question,
            reference=reference,
            hypothesis=hypothesis,
            bleu=bleu(reference, hypothesis, max_n=max_n),
            rouge=rouge_l(reference, hypothesis),
        )


# --- model-probability metrics ----------------------------------------------


def answer_logprobs(
    model: LanguageModel,
    tokenizer: Tokenizer,
    question: str,
    answer: str,
) -> list[float]:
    """Teacher-forced per-token log-probabilities of `answer` given
    `question` as context. An empty question scores the bare answer."""
    context = list(tokenizer.tokenize(question)) if question else []
    target = tokenizer.tokenize(answer)
    if not target:
        raise InvalidInput("answer tokenizes to nothing")
    out: list[float] = []
    for t in target:
        out.append(float(model.next_token_logprobs(context)[t]))
        context.append(t)
    return out


def normalized_conditional_probability(
    model: LanguageModel,
    tokenizer: Tokenizer,
    question: str,
    answer: str,
    floor: float = PROBABILITY_FLOOR,
) -> float:
    """P(answer | question) ** (1 / answer token count), floored away
    from zero so downstream ratios stay defined."""
    lp = answer_logprobs(model, tokenizer, question, answer)
    return max(float(np.exp(np.mean(lp))), floor)


@dataclass(frozen=True)
class ScoredAnswerSet:
    """Normalized probabilities for one example: the correct answer, its
    perturbed (wrong) variants, and a paraphrase of the correct answer."""

    correct: float
    perturbed: tuple[float, ...]
    paraphrased: float

    def __post_init__(self) -> None:
        values = (self.correct, *self.perturbed, self.paraphrased)
        if not self.perturbed:
            raise InvalidInput("need at least one perturbed probability")
        for v in values:
            if not (0.0 < v <= 1.0):
                raise InvalidInput(f"normalized probabilities must be in (0, 1], got {v}")


def score_answer_set(
    model: LanguageModel,
    tokenizer: Tokenizer,
    question: str,
    correct_answer: str,
    perturbed_answers: Sequence[str],
    paraphrased_answer: Optional[str] = None,
) -> ScoredAnswerSet:
    """Teacher-force every variant; the paraphrase defaults to the
    original answer (the real-answers convention)."""
    norm = lambda a: normalized_conditional_probability(model, tokenizer, question, a)
    return ScoredAnswerSet(
        correct=norm(correct_answer),
        perturbed=tuple(norm(a) for a in perturbed_answers),
        paraphrased=norm(
            paraphrased_answer if paraphrased_answer is not None else correct_answer
        ),
    )


def answer_probability_ratio(s: ScoredAnswerSet) -> float:
    """Correct answer's normalized probability over the summed perturbed
    ones."""
    denom = sum(s.perturbed)
    if denom == 0.0:
        raise InvalidInput("perturbed probabilities sum to zero")
    return s.correct / denom


def truth_ratio(s: ScoredAnswerSet) -> float:
    """Geometric mean of the perturbed probabilities over the paraphrased
    probability. Above 1 means the model prefers wrong variants."""
    geo = float(np.exp(np.mean(np.log(s.perturbed))))
    return geo / s.paraphrased


def utility_truth_score(ratio: float) -> float:
    return max(0.0, 1.0 - ratio)


def text_logprobs(model: LanguageModel, tokenizer: Tokenizer, text: str) -> list[float]:
    """Teacher-forced log-probabilities of a bare text, no context."""
    return answer_logprobs(model, tokenizer, "", text)


def min_k_score(
    model: LanguageModel,
    tokenizer: Tokenizer,
    text: str,
    k_fraction: float = 0.2,
) -> float:
    """Mean of the lowest ceil(k * n) teacher-forced token log-probs."""
    if not (0.0 < k_fraction <= 1.0):
        raise InvalidInput("k_fraction must be in (0, 1]")
    lp = sorted(text_logprobs(model, tokenizer, text))
    take = math.ceil(k_fraction * len(lp))
    return float(np.mean(lp[:take]))


# --- distribution-level aggregates ------------------------------------------


def ks_statistic(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Two-sample Kolmogorov-Smirnov statistic sup |F_x - F_y|."""
    x = np.sort(np.asarray(xs, dtype=np.float64))
    y = np.sort(np.asarray(ys, dtype=np.float64))
    if x.size == 0 or y.size == 0:
        raise InvalidInput("both samples must be non-empty")
    grid = np.concatenate([x, y])
    fx = np.searchsorted(x, grid, side="right") / x.size
    fy = np.searchsorted(y, grid, side="right") / y.size
    return float(np.max(np.abs(fx - fy)))


def kolmogorov_survival(lam: float) -> float:
    """Q(lambda) = 2 * sum_{j>=1} (-1)^(j-1) exp(-2 j^2 lambda^2).

    Truncated at 100 terms or when a term drops below 1e-10; clipped to
    [0, 1]. lambda = 0 returns 1 exactly.
    """
    if lam < 0:
        raise InvalidInput("lambda must be non-negative")
    if lam == 0.0:
        return 1.0
    total = 0.0
    sign = 1.0
    for j in range(1, _KS_TERMS + 1):
        term = math.exp(-2.0 * j * j * lam * lam)
        total += sign * term
        if term < _KS_TOL:
            break
        sign = -sign
    return min(1.0, max(0.0, 2.0 * total))


def ks_two_sample(xs: Sequence[float], ys: Sequence[float]) -> tuple[float, float]:
    """(D statistic, asymptotic p-value) with effective size nm/(n+m).

    D = 0 (identical ECDFs) maps to p = 1 exactly.
    """
    d = ks_statistic(xs, ys)
    if d == 0.0:
        return 0.0, 1.0
    n_eff = len(xs) * len(ys) / (len(xs) + len(ys))
    return d, kolmogorov_survival(math.sqrt(n_eff) * d)


def forget_quality(
    unlearned_truth_ratios: Sequence[float],
    retained_truth_ratios: Sequence[float],
) -> float:
    """KS p-value comparing truth-ratio distributions; 1.0 means the
    unlearned model is indistinguishable from the retained one."""
    return ks_two_sample(unlearned_truth_ratios, retained_truth_ratios)[1]


def model_utility(scores: Sequence[float]) -> float:
    """Harmonic mean across facet scores (canonically nine of them); any
    zero facet collapses the whole aggregate to 0."""
    vals = [float(s) for s in scores]
    if not vals:
        raise InvalidInput("need at least one score")
    for v in vals:
        if v < 0:
            raise InvalidInput(f"scores must be non-negative, got {v}")
    if any(v == 0.0 for v in vals):
        logger.warning("model utility collapsed: a facet score is zero")
        return 0.0
    return len(vals) / sum(1.0 / v for v in vals)


def fq_gap(
    unlearned_pairs: Sequence[tuple[float, float]],
    retained_pairs: Sequence[tuple[float, float]],
) -> float:
    """|mean BLEU difference| + |mean ROUGE-L difference| between the two
    models' outputs on the same examples. Each pair is (bleu, rouge_l)."""
    if not unlearned_pairs or not retained_pairs:
        raise InvalidInput("score lists must be non-empty")
    if len(unlearned_pairs) != len(retained_pairs):
        raise InvalidInput(
            f"misaligned example sets: {len(unlearned_pairs)} vs {len(retained_pairs)}"
        )
    u = np.asarray(unlearned_pairs, dtype=np.float64)
    r = np.asarray(retained_pairs, dtype=np.float64)
    return float(abs(u[:, 0].mean() - r[:, 0].mean()) + abs(u[:, 1].mean() - r[:, 1].mean()))


def auc_roc(member_scores: Sequence[float], nonmember_scores: Sequence[float]) -> float:
    """Mann-Whitney AUC: P(member score > nonmember score), ties 1/2."""
    pos = np.asarray(member_scores, dtype=np.float64)
    neg = np.asarray(nonmember_scores, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise InvalidInput("both score lists must be non-empty")
    greater = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return float((greater + 0.5 * ties) / (pos.size * neg.size))


def priv_leak(auc_unlearn: float, auc_retrain: float) -> float:
    """Relative AUC gap (AUC_u - AUC_r) / AUC_r, as a percentage."""
    if auc_retrain == 0.0:
        raise InvalidInput("retrained AUC of zero leaves the gap undefined")
    return (auc_unlearn - auc_retrain) / auc_retrain * 100.0


# --- generation-based aggregates --------------------------------------------


def greedy_decode(
    model: LanguageModel,
    prompt_tokens: Sequence[int],
    eos_token: int,
    max_new_tokens: int = 128,
) -> list[int]:
    """Argmax decoding (lowest id wins ties); eos is not included."""
    if max_new_tokens < 1:
        raise InvalidInput("max_new_tokens must be at least 1")
    context = [int(t) for t in prompt_tokens]
    out: list[int] = []
    for _ in range(max_new_tokens):
        t = int(np.argmax(model.next_token_logprobs(context)))
        if t == eos_token:
            break
        out.append(t)
        context.append(t)
    return out


def verbmem(
    model: LanguageModel,
    tokenizer: Tokenizer,
    examples: Sequence[tuple[str, int]],
    eos_token: int,
    max_new_tokens: int = 128,
) -> float:
    """Verbatim memorization, 0-100.

    Each example is (text, l): the model greedily continues the first l
    tokens and the continuation is scored by ROUGE-L F1 against the true
    remainder. Texts with no tokens past l are skipped with a warning.
    """
    scores = []
    for text, split_point in examples:
        if split_point < 1:
            raise InvalidInput("split point must be at least 1")
        tokens = tokenizer.tokenize(text)
        if len(tokens) <= split_point:
            logger.warning("skipping text with %d tokens <= split %d", len(tokens), split_point)
            continue
        generated = greedy_decode(model, tokens[:split_point], eos_token, max_new_tokens)
        reference = tokenizer.detokenize(tokens[split_point:])
        hypothesis = tokenizer.detokenize(generated) if generated else ""
        scores.append(rouge_l(reference, hypothesis).f1)
    if not scores:
        raise InvalidInput("no usable examples")
    return float(np.mean(scores)) * 100.0


def knowmem(
    model: LanguageModel,
    tokenizer: Tokenizer,
    qa: Sequence[QAPair],
    eos_token: int,
    max_new_tokens: int = 128,
) -> float:
    """Knowledge memorization, 0-100: ROUGE-L F1 of greedy answers
    against the gold answers."""
    if not qa:
        raise InvalidInput("need at least one QA pair")
    scores = []
    for pair in qa:
        generated = greedy_decode(
            model, tokenizer.tokenize(pair.question), eos_token, max_new_tokens
        )
        hypothesis = tokenizer.detokenize(generated) if generated else ""
        scores.append(rouge_l(pair.answer, hypothesis).f1)
    return float(np.mean(scores)) * 100.0


# --- report ------------------------------------------------------------------


@dataclass
class MetricReport:
    unlearned_mean_bleu: float
    unlearned_mean_rouge_recall: float
    retained_mean_bleu: float
    retained_mean_rouge_recall: float
    fq_gap: float
    forget_quality: Optional[float] = None
    model_utility: Optional[float] = None
    priv_leak: Optional[float] = None
    auc_unlearned: Optional[float] = None
    auc_retained: Optional[float] = None
    metadata: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        out = {
            "unlearned_mean_bleu": self.unlearned_mean_bleu,
            "unlearned_mean_rouge_recall": self.unlearned_mean_rouge_recall,
            "retained_mean_bleu": self.retained_mean_bleu,
            "retained_mean_rouge_recall": self.retained_mean_rouge_recall,
            "fq_gap": self.fq_gap,
        }
        for key in ("forget_quality", "model_utility", "priv_leak",
                    "auc_unlearned", "auc_retained"):
            val = getattr(self, key)
            if val is not None:
                out[key] = val
        if self.metadata:
            out["metadata"] = self.metadata
        return out


def build_report(
    unlearned: Sequence[ScoredAnswer],
    retained: Sequence[ScoredAnswer],
    unlearned_truth_ratios: Optional[Sequence[float]] = None,
    retained_truth_ratios: Optional[Sequence[float]] = None,
    utility_scores: Optional[Sequence[float]] = None,
    member_nonmember_scores: Optional[dict] = None,
    metadata: Optional[dict] = None,
) -> MetricReport:
    """Assemble the aggregate report from per-example scores.

    `member_nonmember_scores`, when given, maps the four keys
    unlearned_member / unlearned_nonmember / retained_member /
    retained_nonmember to min-k score lists.
    """
    if not unlearned or not retained:
        raise InvalidInput("both score lists must be non-empty")
    u_pairs = [(s.bleu, s.rouge.recall) for s in unlearned]
    r_pairs = [(s.bleu, s.rouge.recall) for s in retained]
    report = MetricReport(
        unlearned_mean_bleu=float(np.mean([p[0] for p in u_pairs])),
        unlearned_mean_rouge_recall=float(np.mean([p[1] for p in u_pairs])),
        retained_mean_bleu=float(np.mean([p[0] for p in r_pairs])),
        retained_mean_rouge_recall=float(np.mean([p[1] for p in r_pairs])),
        fq_gap=fq_gap(u_pairs, r_pairs),
        metadata=dict(metadata or {}),
    )
    if unlearned_truth_ratios is not None and retained_truth_ratios is not None:
        report.forget_quality = forget_quality(unlearned_truth_ratios, retained_truth_ratios)
    if utility_scores is not None:
        report.model_utility = model_utility(utility_scores)
    if member_nonmember_scores is not None:
        required = {
            "unlearned_member",
            "unlearned_nonmember",
            "retained_member",
            "retained_nonmember",
        }
        missing = required - set(member_nonmember_scores)
        if missing:
            raise InvalidInput(f"membership scores missing keys: {sorted(missing)}")
        report.auc_unlearned = auc_roc(
            member_nonmember_scores["unlearned_member"],
            member_nonmember_scores["unlearned_nonmember"],
        )
        report.auc_retained = auc_roc(
            member_nonmember_scores["retained_member"],
            member_nonmember_scores["retained_nonmember"],
        )
        report.priv_leak = priv_leak(report.auc_unlearned, report.auc_retained)
    return report
