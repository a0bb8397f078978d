"""Generation-time unlearning over a forget set.

Prompts are routed by a small gate classifier; forget-routed prompts
retrieve their matching record, derive forbidden spans from its answer,
and decode under hard (token trie) and soft (embedding similarity)
penalties. Retain-routed prompts decode unconstrained. A metric stack
quantifies forgetting, utility, and privacy leakage.
"""

from .core import (
    BigramModel,
    InvalidInput,
    LanguageModel,
    Prompt,
    QAPair,
    Split,
    Tokenizer,
    ToyTokenizer,
    UniformModel,
)
from .decoder import BeamCandidate, DecodeConfig, DecodeResult, decode
from .matching import (
    INFINITE,
    HardMatchConfig,
    PhraseTrie,
    SoftMatchConfig,
    build_trie,
    longest_matched_suffix,
    semantic_penalty,
    token_penalty,
)
from .pipeline import GuardConfig, GuardHandles, GuardOutcome, guard_batch, guard_generate

__all__ = [
    "BeamCandidate",
    "BigramModel",
    "DecodeConfig",
    "DecodeResult",
    "GuardConfig",
    "GuardHandles",
    "GuardOutcome",
    "HardMatchConfig",
    "INFINITE",
    "InvalidInput",
    "LanguageModel",
    "PhraseTrie",
    "Prompt",
    "QAPair",
    "SoftMatchConfig",
    "Split",
    "Tokenizer",
    "ToyTokenizer",
    "UniformModel",
    "build_trie",
    "decode",
    "guard_batch",
    "guard_generate",
    "longest_matched_suffix",
    "semantic_penalty",
    "token_penalty",
]

__version__ = "0.1.0"
