#!/usr/bin/env python3
"""End-to-end demo of the guarded generation pipeline on a toy world.

Builds a 15-word bigram model with two "secret" facts (a city and a
job), trains the forget/retain gate on synthetic prompts, and runs a
handful of queries through guard_generate. Retain-routed prompts decode
unchanged; forget-routed prompts have the retrieved answer's words
blocked at decode time.

Usage: python3 scripts/run_toy_demo.py [--seed N]
"""

from __future__ import annotations

import argparse

import numpy as np

from guardgen.classifier import ClassifierConfig, evaluate_rates, train
from guardgen.core import BigramModel, Prompt, QAPair, Split, ToyTokenizer
from guardgen.decoder import DecodeConfig
from guardgen.embedding import BagOfWordsEmbedder, TableEmbedder
from guardgen.matching import SoftMatchConfig
from guardgen.pipeline import GuardConfig, GuardHandles, guard_generate
from guardgen.retrieval import build_index

WORDS = ["<unk>", "the", "what", "is", "secret", "city", "paris", "lutetia",
         "nice", "civil", "engineer", "job", "a", "good", "</s>"]
CITY, PARIS, LUTETIA, NICE = 5, 6, 7, 8
CIVIL, ENGINEER, JOB, A, GOOD, EOS = 9, 10, 11, 12, 13, 14
RETAIN_POOL = ["the", "what", "is", "city", "job", "a", "good"]


def build_world(seed: int) -> GuardHandles:
    tok = ToyTokenizer(WORDS)
    model = BigramModel(tok.vocab_size, {
        CITY: {PARIS: 0.5, LUTETIA: 0.3, NICE: 0.15, EOS: 0.05},
        PARIS: {EOS: 1.0}, LUTETIA: {EOS: 1.0}, NICE: {EOS: 1.0},
        JOB: {CIVIL: 0.7, GOOD: 0.2, A: 0.1},
        CIVIL: {ENGINEER: 0.9, EOS: 0.1},
        ENGINEER: {EOS: 1.0}, GOOD: {EOS: 1.0}, A: {GOOD: 1.0},
    })
    bag = BagOfWordsEmbedder(WORDS)

    # Synthetic gate data: any prompt containing "secret" is a forget
    # prompt, everything drawn from the retain pool is not.
    rng = np.random.default_rng(seed)
    forget_texts, retain_texts = [], []
    for _ in range(40):
        n = int(rng.integers(2, 6))
        words = [RETAIN_POOL[int(i)] for i in rng.integers(0, len(RETAIN_POOL), n)]
        retain_texts.append(" ".join(words))
        fwords = list(words)
        fwords.insert(int(rng.integers(0, len(fwords) + 1)), "secret")
        forget_texts.append(" ".join(fwords))
    X = np.stack([bag.embed_text(t) for t in forget_texts + retain_texts])
    y = np.array([1] * len(forget_texts) + [0] * len(retain_texts))
    params = train(X, y, ClassifierConfig(hidden_dim=16, learning_rate=0.1,
                                          epochs=300, seed=seed))
    fnr, fpr = evaluate_rates(params, X, y)
    print(f"gate trained: fnr={fnr} fpr={fpr} on {len(y)} examples")

    # One axis per word; "lutetia" tilted toward "paris" so the semantic
    # matcher treats it as a near-synonym (cosine 0.894).
    table = {}
    for i, w in enumerate(WORDS):
        v = [0.0] * len(WORDS)
        v[i] = 1.0
        table[w] = v
    tilt = [0.0] * len(WORDS)
    tilt[PARIS] = 0.894427190999916
    tilt[LUTETIA] = 0.447213595499958
    table["lutetia"] = tilt

    records = [
        QAPair(question="what is the secret city", answer="paris",
               split=Split.FORGET),
        QAPair(question="what is the secret job", answer="a civil engineer",
               split=Split.FORGET),
    ]
    return GuardHandles(
        model=model, tokenizer=tok, classifier_params=params,
        classifier_embedder=bag, semantic_embedder=TableEmbedder(table),
        index=build_index(records, bag, key="question"),
        retrieval_embedder=bag,
    )


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=20240817)
    args = parser.parse_args()

    handles = build_world(args.seed)
    config = GuardConfig(decode=DecodeConfig(
        eos_token=EOS, beam_width=4, max_new_tokens=4,
        soft=SoftMatchConfig(alpha_sbert=1.0, delta=0.8)))

    prompts = [
        "what is the city",
        "what is the job",
        "what is the secret city",
        "what is the secret job",
    ]
    print(f"\n{'prompt':<28} {'route':<8} {'output':<18} blocked")
    for text in prompts:
        out = guard_generate(Prompt(prompt_id=text, text=text), handles, config)
        route = out.route.value if out.route is not None else "-"
        print(f"{text:<28} {route:<8} {out.output:<18} {out.blocked}")


if __name__ == "__main__":
    main()
