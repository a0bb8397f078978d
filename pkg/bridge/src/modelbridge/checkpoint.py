"""Checkpoint wrapper: one loaded causal LM plus its tokenizer.

All methods are pure functions of their arguments once the checkpoint
is loaded (eval mode, no dropout, no sampling), so repeated calls give
bit-identical results within a process.
"""

from __future__ import annotations

import os
import string
from typing import Sequence

os.environ.setdefault("HF_HUB_DISABLE_PROGRESS_BARS", "1")
os.environ.setdefault("TRANSFORMERS_NO_ADVISORY_WARNINGS", "1")

import torch
from transformers import AutoModelForCausalLM, AutoTokenizer
from transformers.utils import logging as hf_logging

hf_logging.set_verbosity_error()
hf_logging.disable_progress_bar()

# Words too generic to be worth blocking when extracting key phrases.
_STOPWORDS = frozenset(
    "a an and are as at be by for from has he in is it its of on or that "
    "the this to was were will with she they i you".split()
)


class CheckpointRuntime:
    """Inference-only access to a saved causal LM checkpoint."""

    def __init__(self, model, tokenizer, layer_index: int) -> None:
        self.model = model
        self.tokenizer = tokenizer
        self.layer_index = layer_index
        self._n_states = int(model.config.num_hidden_layers) + 1
        if not -self._n_states <= layer_index < self._n_states:
            raise ValueError(
                f"layer index {layer_index} out of range for "
                f"{self._n_states} hidden-state layers"
            )
        self._max_context = int(getattr(model.config, "n_positions", 0) or
                                getattr(model.config, "max_position_embeddings", 10**9))

    @classmethod
    def load(cls, checkpoint: str, layer_index: int = -2) -> "CheckpointRuntime":
        model = AutoModelForCausalLM.from_pretrained(checkpoint)
        model.eval()
        tokenizer = AutoTokenizer.from_pretrained(checkpoint)
        if tokenizer.eos_token_id is None:
            raise ValueError("checkpoint tokenizer defines no eos token")
        return cls(model, tokenizer, layer_index)

    def meta(self) -> dict:
        return {
            "vocab_size": int(self.model.config.vocab_size),
            "eos_token_id": int(self.tokenizer.eos_token_id),
            "dimension": int(self.model.config.hidden_size),
            "layer_index": self.layer_index,
            "model_type": str(self.model.config.model_type),
        }

    def _validate_tokens(self, tokens: Sequence[int]) -> list[int]:
        if not isinstance(tokens, (list, tuple)):
            raise ValueError("tokens must be a list of ids")
        ids = []
        vocab = int(self.model.config.vocab_size)
        for t in tokens:
            if isinstance(t, bool) or not isinstance(t, int):
                raise ValueError(f"token id {t!r} is not an integer")
            if not 0 <= t < vocab:
                raise ValueError(f"token id {t} outside [0, {vocab})")
            ids.append(t)
        return ids

    def next_token_logprobs(self, tokens: Sequence[int]) -> list[float]:
        ids = self._validate_tokens(tokens)
        if not ids:
            raise ValueError("logits need at least one context token")
        if len(ids) > self._max_context:
            raise ValueError(f"context of {len(ids)} tokens exceeds "
                             f"model limit {self._max_context}")
        with torch.no_grad():
            out = self.model(input_ids=torch.tensor([ids]))
        row = torch.log_softmax(out.logits[0, -1].double(), dim=-1)
        return row.tolist()

    def _encode(self, text: str) -> list[int]:
        if not isinstance(text, str):
            raise ValueError("text must be a string")
        ids = self.tokenizer.encode(text, add_special_tokens=False)
        if not ids:
            raise ValueError("text produced no tokens")
        if len(ids) > self._max_context:
            raise ValueError(f"text of {len(ids)} tokens exceeds "
                             f"model limit {self._max_context}")
        return ids

    def _hidden_states(self, ids: list[int]) -> torch.Tensor:
        with torch.no_grad():
            out = self.model(input_ids=torch.tensor([ids]),
                             output_hidden_states=True)
        return out.hidden_states[self.layer_index][0].double()

    def hidden(self, text: str) -> dict:
        ids = self._encode(text)
        states = self._hidden_states(ids)
        return {
            "states": states.tolist(),
            "mask": [1] * len(ids),
            "rows": len(ids),
            "cols": int(states.shape[1]),
        }

    def embed(self, text: str) -> list[float]:
        ids = self._encode(text)
        return self._hidden_states(ids).mean(dim=0).tolist()

    def extract(self, answer: str) -> list[str]:
        if not isinstance(answer, str):
            raise ValueError("answer must be a string")
        spans, seen = [], set()
        for raw in answer.split():
            word = raw.strip(string.punctuation)
            if not word or word.lower() in _STOPWORDS or word.lower() in seen:
                continue
            seen.add(word.lower())
            spans.append(word)
        return spans

    def tokenize(self, text: str) -> list[int]:
        if not isinstance(text, str):
            raise ValueError("text must be a string")
        return [int(t) for t in self.tokenizer.encode(text, add_special_tokens=False)]

    def detokenize(self, tokens: Sequence[int]) -> str:
        ids = self._validate_tokens(tokens)
        return self.tokenizer.decode(ids)
