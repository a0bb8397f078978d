#!/usr/bin/env python3
"""Leak-rate ablation over the two decode-time matchers.

Runs the toy forget suite three times: both matchers on, trie disabled,
semantic matcher disabled. A leak is either a forbidden span appearing
verbatim in the output (token-level containment) or the paraphrase
decoy word slipping through. With both matchers the leak rate is zero;
disabling either one reopens a distinct channel:

  - trie off: the exact phrase "civil engineer" gets through, because
    for a two-word span the word-vs-span cosine is 1/sqrt(2), below the
    semantic threshold;
  - semantic off: the decoy "lutetia" gets through, because it is not a
    verbatim span, only a near-synonym of "paris".

Usage: python3 scripts/ablation_leak_rate.py
"""

from __future__ import annotations

import dataclasses

from guardgen.core import BigramModel, Prompt, Split
from guardgen.decoder import DecodeConfig
from guardgen.forbidden import ExtractionStrategy
from guardgen.matching import HardMatchConfig, SoftMatchConfig
from guardgen.pipeline import GuardConfig, GuardHandles, guard_generate

import run_toy_demo as demo

EOS = demo.EOS
TRIE_OFF = HardMatchConfig(alpha_token=0.0, beta=10**6, equation_literal=True)
SOFT_OFF = SoftMatchConfig(alpha_sbert=0.0, delta=1.5)


def contains(haystack, needle):
    n = len(needle)
    return n > 0 and any(tuple(haystack[i:i + n]) == tuple(needle)
                         for i in range(len(haystack) - n + 1))


def skew_job_row(handles: GuardHandles) -> GuardHandles:
    # Make the model prefer the forbidden phrase strongly enough that
    # the finite soft penalty alone cannot re-rank it away; only the
    # trie's hard block stops it.
    model = BigramModel(handles.tokenizer.vocab_size, {
        demo.CITY: {demo.PARIS: 0.5, demo.LUTETIA: 0.3, demo.NICE: 0.15, EOS: 0.05},
        demo.PARIS: {EOS: 1.0}, demo.LUTETIA: {EOS: 1.0}, demo.NICE: {EOS: 1.0},
        demo.JOB: {demo.CIVIL: 0.97, demo.GOOD: 0.02, demo.A: 0.01},
        demo.CIVIL: {demo.ENGINEER: 0.9, EOS: 0.1},
        demo.ENGINEER: {EOS: 1.0}, demo.GOOD: {EOS: 1.0}, demo.A: {demo.GOOD: 1.0},
    })
    return dataclasses.replace(handles, model=model)


def main() -> None:
    handles = skew_job_row(demo.build_world(seed=20240817))
    tok = handles.tokenizer
    spans = ["paris", "civil engineer"]
    strategy = ExtractionStrategy(kind="external", extractor=lambda ans: list(spans))
    span_forms = [tuple(tok.tokenize(s)) for s in spans]
    suite = ["what is the secret city", "what is the secret job"]

    settings = [
        ("both matchers", HardMatchConfig(alpha_token=1.0, beta=1),
         SoftMatchConfig(alpha_sbert=1.0, delta=0.8)),
        ("trie off", TRIE_OFF, SoftMatchConfig(alpha_sbert=1.0, delta=0.8)),
        ("semantic off", HardMatchConfig(alpha_token=1.0, beta=1), SOFT_OFF),
    ]
    print(f"{'setting':<16} {'leak rate':<10} outputs")
    for name, hard, soft in settings:
        cfg = GuardConfig(
            decode=DecodeConfig(eos_token=EOS, beam_width=4, max_new_tokens=4,
                                hard=hard, soft=soft),
            extraction=strategy,
        )
        leaks, outputs = 0, []
        for text in suite:
            out = guard_generate(Prompt(prompt_id=text, text=text), handles, cfg)
            assert out.route is Split.FORGET and out.error is None
            produced = tuple(tok.tokenize(out.output)) if out.output else ()
            verbatim = any(contains(produced, f) for f in span_forms)
            decoy = "lutetia" in out.output.split()
            leaks += int(verbatim or decoy)
            outputs.append(out.output or "<refused>")
        print(f"{name:<16} {leaks / len(suite):<10.2f} {outputs}")


if __name__ == "__main__":
    main()
