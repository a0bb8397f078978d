"""End-to-end guarded generation.

A prompt is first routed by the gate classifier. Retain-routed prompts run
plain beam search with no constraints attached, so their outputs are
byte-identical to an unguarded model and cannot depend on the forget set.
Forget-routed prompts retrieve their closest forget record, extract
forbidden spans from its answer, and decode under the hard and soft
matching penalties; if every beam gets blocked the configured refusal
text is returned instead.

Any stage failure fails closed: the outcome carries the refusal text plus
an error message naming the stage.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .classifier import MlpParameters, classify
from .core import InvalidInput, LanguageModel, Prompt, Split, Tokenizer
from .decoder import DecodeConfig, DecodeResult, decode
from .embedding import Embedder
from .forbidden import ExtractionStrategy, extract
from .matching import build_trie
from .retrieval import AnswerIndex, Reranker, rerank_position, top1_position

logger = logging.getLogger(__name__)

DEFAULT_REFUSAL = "I'm not sure."


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception) -> None:
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class GuardConfig:
    decode: DecodeConfig
    decision_threshold: float = 0.5
    rerank: bool = False
    rerank_k: int = 5
    extraction: ExtractionStrategy = field(default_factory=ExtractionStrategy)
    refusal_text: str = DEFAULT_REFUSAL


@dataclass
class GuardHandles:
    model: LanguageModel
    tokenizer: Tokenizer
    classifier_params: MlpParameters
    classifier_embedder: Embedder
    semantic_embedder: Embedder
    index: Optional[AnswerIndex] = None
    retrieval_embedder: Optional[Embedder] = None
    reranker: Optional[Reranker] = None


@dataclass
class GuardOutcome:
    prompt_id: Optional[str]
    route: Optional[Split]
    output: str
    blocked: bool
    retrieved_position: Optional[int] = None
    forbidden_span_count: Optional[int] = None
    error: Optional[str] = None

    def to_json_dict(self) -> dict:
        return {
            "prompt_id": self.prompt_id,
            "route": self.route.value if self.route is not None else None,
            "output": self.output,
            "blocked": self.blocked,
            "retrieved_position": self.retrieved_position,
            "forbidden_span_count": self.forbidden_span_count,
            "error": self.error,
        }


def _run(stage: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except Exception as exc:
        raise StageError(stage, exc) from exc


def _strip_eos(tokens: Sequence[int], eos: int) -> list[int]:
    out = list(tokens)
    while out and out[-1] == eos:
        out.pop()
    return out


def unconstrained_decode(
    model: LanguageModel,
    tokenizer: Tokenizer,
    prompt_text: str,
    cfg: DecodeConfig,
) -> DecodeResult:
    """Beam search with an empty trie and no spans attached."""
    prompt_tokens = tokenizer.tokenize(prompt_text)
    return decode(model, tokenizer, prompt_tokens, build_trie([]), (), _NullEmbedder(), cfg)


class _NullEmbedder:
    # Used only on the unconstrained path, where there are no spans to
    # compare against; dimension is arbitrary.
    dimension = 1

    def embed_text(self, text: str):  # pragma: no cover - never reached
        raise InvalidInput("null embedder cannot embed")


def guard_generate(prompt: Prompt, handles: GuardHandles, config: GuardConfig) -> GuardOutcome:
    outcome = GuardOutcome(
        prompt_id=prompt.prompt_id, route=None, output=config.refusal_text, blocked=True
    )
    try:
        vec = _run("classify", handles.classifier_embedder.embed_text, prompt.text)
        route = _run(
            "classify",
            classify,
            handles.classifier_params,
            vec,
            config.decision_threshold,
        )
        outcome.route = route

        if route == Split.RETAIN:
            result = _run(
                "decode", unconstrained_decode, handles.model, handles.tokenizer,
                prompt.text, config.decode,
            )
            outcome.output = handles.tokenizer.detokenize(
                _strip_eos(result.best, config.decode.eos_token)
            )
            outcome.blocked = False
            return outcome

        if handles.index is None or handles.retrieval_embedder is None:
            raise StageError("retrieve", InvalidInput("forget route needs an index"))
        if config.rerank:
            if handles.reranker is None:
                raise StageError("retrieve", InvalidInput("rerank enabled without a reranker"))
            position = _run(
                "retrieve", rerank_position, handles.index, prompt.text,
                handles.retrieval_embedder, handles.reranker, config.rerank_k,
            )
        else:
            position = _run(
                "retrieve", top1_position, handles.index, prompt.text,
                handles.retrieval_embedder,
            )
        outcome.retrieved_position = position
        record = handles.index.records[position]

        fset = _run(
            "extract", extract, record.answer, config.extraction,
            handles.model, handles.tokenizer,
        )
        outcome.forbidden_span_count = len(fset)

        trie = build_trie(fset.token_forms)
        result = _run(
            "decode", decode, handles.model, handles.tokenizer,
            handles.tokenizer.tokenize(prompt.text), trie, fset.spans,
            handles.semantic_embedder, config.decode,
        )
        if result.fully_blocked:
            outcome.output = config.refusal_text
            outcome.blocked = True
        else:
            outcome.output = handles.tokenizer.detokenize(
                _strip_eos(result.best, config.decode.eos_token)
            )
            outcome.blocked = False
        return outcome
    except StageError as exc:
        logger.error("prompt %s failed at %s: %s", prompt.prompt_id, exc.stage, exc.cause)
        outcome.error = str(exc)
        outcome.output = config.refusal_text
        outcome.blocked = True
        return outcome
    except Exception as exc:  # fail closed on anything unforeseen as well
        logger.error("prompt %s failed: %s", prompt.prompt_id, exc)
        outcome.error = f"unexpected: {exc}"
        outcome.output = config.refusal_text
        outcome.blocked = True
        return outcome


def guard_batch(
    prompts: Sequence[Prompt], handles: GuardHandles, config: GuardConfig
) -> list[GuardOutcome]:
    """Process prompts independently; one failure never stops the batch."""
    return [guard_generate(p, handles, config) for p in prompts]
