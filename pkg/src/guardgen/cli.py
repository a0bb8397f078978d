"""Command line entry points.

Subcommands: train-classifier, build-index, generate, evaluate. Every
command takes --config pointing at a JSON file; relative paths inside the
config resolve against the config file's directory. Unknown config keys
are rejected rather than ignored.

Exit codes: 0 on success, 1 when any item failed at runtime, 2 for usage
or configuration errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from .bridge_client import (
    BridgeConnection,
    BridgeEmbedder,
    BridgeExtractor,
    BridgeModel,
    BridgeTokenizer,
    PooledHiddenEmbedder,
)
from .classifier import (
    ClassifierConfig,
    evaluate_rates,
    load_labeled_jsonl,
    load_parameters,
    save_parameters,
    train,
)
from .core import (
    BigramModel,
    InvalidInput,
    Prompt,
    QAPair,
    Split,
    ToyTokenizer,
    UNK_ID,
    UniformModel,
    load_vocab,
)
from .decoder import DecodeConfig
from .embedding import BagOfWordsEmbedder, HashingEmbedder, TableEmbedder
from .forbidden import ExtractionStrategy, StrategyKind, load_stopwords
from .matching import HardMatchConfig, SoftMatchConfig
from .metrics import ScoredAnswer, build_report
from .pipeline import GuardConfig, GuardHandles, guard_batch
from .retrieval import CosineReranker, build_index, load_index, save_index

logger = logging.getLogger(__name__)


class ConfigError(Exception):
    pass


_TOP_KEYS = {
    "seed", "backend", "model", "bridge", "embedders", "classifier",
    "retrieval", "extraction", "decode", "refusal_text", "evaluate",
}
_SECTION_KEYS = {
    "model": {"vocab_file", "bigram_file"},
    "bridge": {"command", "cwd", "host", "port"},
    "embedders": {"classifier", "retrieval", "semantic"},
    "classifier": {
        "params_file", "threshold", "train_file", "eval_file",
        "hidden_dim", "learning_rate", "epochs", "dropout_rate", "seed",
    },
    "retrieval": {"forget_file", "index_file", "key", "rerank", "rerank_k"},
    "extraction": {"kind", "tau", "stopword_file"},
    "decode": {
        "beam_width", "max_new_tokens", "expansion_fanout", "eos_token",
        "alpha_token", "beta", "equation_literal", "alpha_sbert", "delta",
    },
    "evaluate": {"utility_scores", "membership_scores", "bleu_max_n"},
}
_EMBEDDER_KEYS = {"kind", "vocab_file", "dimension", "table_file"}


def _check_keys(obj: dict, allowed: set[str], where: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")


def load_config(path: str | Path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    _check_keys(cfg, _TOP_KEYS, "config")
    for section, keys in _SECTION_KEYS.items():
        sub = cfg.get(section)
        if sub is None:
            continue
        if not isinstance(sub, dict):
            raise ConfigError(f"config section {section!r} must be an object")
        _check_keys(sub, keys, section)
    for role, spec in (cfg.get("embedders") or {}).items():
        if not isinstance(spec, dict):
            raise ConfigError(f"embedders.{role} must be an object")
        _check_keys(spec, _EMBEDDER_KEYS, f"embedders.{role}")
    cfg["_base_dir"] = p.parent
    return cfg


def _resolve(cfg: dict, value: str) -> Path:
    path = Path(value)
    return path if path.is_absolute() else cfg["_base_dir"] / path


def _input_file(path: Path, what: str) -> Path:
    # Referenced inputs must exist up front; a missing one is a usage
    # error (exit 2), not a mid-run failure.
    if not path.is_file():
        raise ConfigError(f"{what} not found: {path}")
    return path


class Runtime:
    """Everything a command needs, built once from the config."""

    def __init__(self, cfg: dict) -> None:
        self.cfg = cfg
        self.backend = cfg.get("backend", "toy")
        if self.backend not in ("toy", "bridge"):
            raise ConfigError(f"backend must be toy or bridge, got {self.backend!r}")
        self.conn: Optional[BridgeConnection] = None
        self.model = None
        self.tokenizer = None
        self._vocab: Optional[list[str]] = None

    def close(self) -> None:
        if self.conn is not None:
            self.conn.close()

    def _require(self, section: str, key: str) -> object:
        value = (self.cfg.get(section) or {}).get(key)
        if value is None:
            raise ConfigError(f"config needs {section}.{key}")
        return value

    def load_backend(self) -> None:
        if self.backend == "toy":
            vocab_path = _resolve(self.cfg, str(self._require("model", "vocab_file")))
            try:
                self._vocab = load_vocab(vocab_path)
                self.tokenizer = ToyTokenizer(self._vocab)
            except (OSError, InvalidInput) as exc:
                raise ConfigError(f"cannot load vocabulary: {exc}") from exc
            bigram = (self.cfg.get("model") or {}).get("bigram_file")
            try:
                if bigram:
                    self.model = BigramModel.from_file(
                        _resolve(self.cfg, bigram), self.tokenizer.vocab_size
                    )
                else:
                    self.model = UniformModel(self.tokenizer.vocab_size)
            except (OSError, InvalidInput) as exc:
                raise ConfigError(f"cannot load bigram table: {exc}") from exc
            return
        bridge = self.cfg.get("bridge") or {}
        if "host" in bridge or "port" in bridge:
            if "host" not in bridge or "port" not in bridge:
                raise ConfigError("bridge socket transport needs both host and port")
            self.conn = BridgeConnection.connect(str(bridge["host"]), int(bridge["port"]))
        elif "command" in bridge:
            command = bridge["command"]
            if not isinstance(command, list) or not command:
                raise ConfigError("bridge.command must be a non-empty list")
            cwd = bridge.get("cwd")
            self.conn = BridgeConnection.spawn(
                [str(c) for c in command], cwd=str(_resolve(self.cfg, cwd)) if cwd else None
            )
        else:
            raise ConfigError("bridge backend needs bridge.command or host/port")
        self.model = BridgeModel(self.conn)
        self.tokenizer = BridgeTokenizer(self.conn)

    def embedder(self, role: str):
        spec = (self.cfg.get("embedders") or {}).get(role)
        if spec is None:
            spec = {"kind": "bridge_embed" if self.backend == "bridge" else "bag_of_words"}
        kind = spec.get("kind")
        if kind == "bag_of_words":
            vocab_file = spec.get("vocab_file") or (self.cfg.get("model") or {}).get("vocab_file")
            if vocab_file is None:
                raise ConfigError(f"embedders.{role} needs a vocab_file")
            try:
                return BagOfWordsEmbedder(load_vocab(_resolve(self.cfg, vocab_file)))
            except (OSError, InvalidInput) as exc:
                raise ConfigError(f"embedders.{role}: {exc}") from exc
        if kind == "hashing":
            return HashingEmbedder(int(spec.get("dimension", 64)))
        if kind == "table":
            table_file = spec.get("table_file")
            if table_file is None:
                raise ConfigError(f"embedders.{role} needs a table_file")
            try:
                table = json.loads(_resolve(self.cfg, table_file).read_text())
                return TableEmbedder(table)
            except (OSError, ValueError, InvalidInput) as exc:
                raise ConfigError(f"embedders.{role}: {exc}") from exc
        if kind in ("bridge_embed", "bridge_hidden"):
            if self.backend != "bridge":
                raise ConfigError(f"embedders.{role}: {kind} requires the bridge backend")
            if self.conn is None:
                self.load_backend()
            return (
                BridgeEmbedder(self.conn)
                if kind == "bridge_embed"
                else PooledHiddenEmbedder(self.conn)
            )
        raise ConfigError(f"embedders.{role}: unknown kind {kind!r}")

    def resolve_eos(self) -> int:
        raw = (self.cfg.get("decode") or {}).get("eos_token")
        if raw is None:
            if self.backend == "bridge":
                return self.model.eos_token_id
            raw = "</s>"
        if isinstance(raw, int):
            if not (0 <= raw < self.tokenizer.vocab_size):
                raise ConfigError(f"eos_token id {raw} outside vocabulary")
            return raw
        if self.backend == "bridge":
            raise ConfigError("bridge backend takes eos_token as an integer id")
        eos_id = self.tokenizer.id_of(str(raw))
        if eos_id == UNK_ID and self._vocab and self._vocab[UNK_ID] != str(raw).lower():
            raise ConfigError(f"eos_token {raw!r} is not in the vocabulary")
        return eos_id

    def decode_config(self) -> DecodeConfig:
        d = self.cfg.get("decode") or {}
        try:
            return DecodeConfig(
                eos_token=self.resolve_eos(),
                beam_width=int(d.get("beam_width", 7)),
                max_new_tokens=int(d.get("max_new_tokens", 32)),
                expansion_fanout=(
                    int(d["expansion_fanout"]) if d.get("expansion_fanout") is not None else None
                ),
                hard=HardMatchConfig(
                    alpha_token=float(d.get("alpha_token", 1.0)),
                    beta=int(d.get("beta", 1)),
                    equation_literal=bool(d.get("equation_literal", False)),
                ),
                soft=SoftMatchConfig(
                    alpha_sbert=float(d.get("alpha_sbert", 1.0)),
                    delta=float(d.get("delta", 0.5)),
                ),
            )
        except (InvalidInput, ValueError) as exc:
            raise ConfigError(f"decode: {exc}") from exc

    def extraction_strategy(self) -> ExtractionStrategy:
        e = self.cfg.get("extraction") or {}
        kind = e.get("kind", "all_words")
        stopwords = None
        if e.get("stopword_file"):
            try:
                stopwords = load_stopwords(_resolve(self.cfg, e["stopword_file"]))
            except OSError as exc:
                raise ConfigError(f"extraction: {exc}") from exc
        extractor = None
        if kind == "external":
            if self.conn is None:
                raise ConfigError("external extraction requires the bridge backend")
            extractor = BridgeExtractor(self.conn)
        try:
            return ExtractionStrategy(
                kind=StrategyKind(kind),
                tau=float(e.get("tau", 0.5)),
                stopwords=stopwords,
                extractor=extractor,
            )
        except (InvalidInput, ValueError) as exc:
            raise ConfigError(f"extraction: {exc}") from exc


def _read_jsonl(path: Path) -> list[dict]:
    rows = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise RuntimeError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
        if not isinstance(obj, dict):
            raise RuntimeError(f"{path}:{lineno}: expected an object")
        rows.append(obj)
    return rows


def _load_qa_pairs(path: Path) -> list[QAPair]:
    pairs = []
    for row in _read_jsonl(path):
        try:
            pairs.append(
                QAPair(
                    question=row["question"],
                    answer=row["answer"],
                    split=Split(row.get("split", "forget")),
                )
            )
        except (KeyError, ValueError, InvalidInput) as exc:
            raise RuntimeError(f"{path}: bad record {row}: {exc}") from exc
    return pairs


def cmd_train_classifier(cfg: dict, args: argparse.Namespace) -> int:
    section = cfg.get("classifier") or {}
    train_file = section.get("train_file")
    if train_file is None:
        raise ConfigError("config needs classifier.train_file")
    out = args.out or section.get("params_file")
    if out is None:
        raise ConfigError("give --out or set classifier.params_file")
    out_path = _resolve(cfg, out)

    runtime = Runtime(cfg)
    try:
        embedder = None

        def _matrix_for(records: list[dict]) -> np.ndarray:
            nonlocal embedder
            rows = []
            for r in records:
                if "vector" in r:
                    rows.append(np.asarray(r["vector"], dtype=np.float64))
                else:
                    if embedder is None:
                        embedder = runtime.embedder("classifier")
                    rows.append(embedder.embed_text(r["text"]))
            return np.stack(rows)

        records, matrix, labels = load_labeled_jsonl(
            _input_file(_resolve(cfg, train_file), "classifier.train_file")
        )
        if matrix is None:
            matrix = _matrix_for(records)
        clf_cfg = ClassifierConfig(
            hidden_dim=int(section.get("hidden_dim", 128)),
            learning_rate=float(section.get("learning_rate", 1e-3)),
            epochs=int(section.get("epochs", 200)),
            dropout_rate=float(section.get("dropout_rate", 0.1)),
            seed=int(section.get("seed", cfg.get("seed", 0))),
        )
        params = train(matrix, labels, clf_cfg)
        save_parameters(params, out_path)

        eval_file = section.get("eval_file")
        if eval_file:
            eval_records, eval_matrix, eval_labels = load_labeled_jsonl(
                _input_file(_resolve(cfg, eval_file), "classifier.eval_file")
            )
            if eval_matrix is None:
                eval_matrix = _matrix_for(eval_records)
        else:
            eval_matrix, eval_labels = matrix, labels
        threshold = float(section.get("threshold", 0.5))
        fnr, fpr = evaluate_rates(params, eval_matrix, eval_labels, threshold)
        report = {
            "examples": int(len(eval_labels)),
            "threshold": threshold,
            "fnr": fnr,
            "fpr": fpr,
        }
        report_path = out_path.with_suffix(out_path.suffix + ".report.json")
        report_path.write_text(json.dumps(report, indent=2))
        print(f"trained on {len(labels)} examples; fnr={fnr} fpr={fpr}")
        print(f"parameters -> {out_path}")
        print(f"report -> {report_path}")
        return 0
    finally:
        runtime.close()


def cmd_build_index(cfg: dict, args: argparse.Namespace) -> int:
    section = cfg.get("retrieval") or {}
    forget_file = section.get("forget_file")
    if forget_file is None:
        raise ConfigError("config needs retrieval.forget_file")
    out = args.out or section.get("index_file")
    if out is None:
        raise ConfigError("give --out or set retrieval.index_file")
    runtime = Runtime(cfg)
    try:
        embedder = runtime.embedder("retrieval")
        pairs = _load_qa_pairs(_input_file(_resolve(cfg, forget_file), "retrieval.forget_file"))
        index = build_index(pairs, embedder, key=section.get("key", "answer"))
        out_path = _resolve(cfg, out)
        save_index(index, out_path)
        print(f"indexed {len(index.records)} forget records -> {out_path}")
        return 0
    finally:
        runtime.close()


def cmd_generate(cfg: dict, args: argparse.Namespace) -> int:
    runtime = Runtime(cfg)
    runtime.load_backend()
    try:
        clf_section = cfg.get("classifier") or {}
        params_file = clf_section.get("params_file")
        if params_file is None:
            raise ConfigError("config needs classifier.params_file")
        try:
            params = load_parameters(_resolve(cfg, params_file))
        except (OSError, InvalidInput) as exc:
            raise ConfigError(f"cannot load classifier parameters: {exc}") from exc

        retr_section = cfg.get("retrieval") or {}
        index = None
        if retr_section.get("index_file"):
            try:
                index = load_index(_resolve(cfg, retr_section["index_file"]))
            except (OSError, InvalidInput) as exc:
                raise ConfigError(f"cannot load index: {exc}") from exc

        retrieval_embedder = runtime.embedder("retrieval")
        handles = GuardHandles(
            model=runtime.model,
            tokenizer=runtime.tokenizer,
            classifier_params=params,
            classifier_embedder=runtime.embedder("classifier"),
            semantic_embedder=runtime.embedder("semantic"),
            index=index,
            retrieval_embedder=retrieval_embedder,
            reranker=CosineReranker(retrieval_embedder),
        )
        guard_cfg = GuardConfig(
            decode=runtime.decode_config(),
            decision_threshold=float(clf_section.get("threshold", 0.5)),
            rerank=bool(retr_section.get("rerank", False)),
            rerank_k=int(retr_section.get("rerank_k", 5)),
            extraction=runtime.extraction_strategy(),
            refusal_text=str(cfg.get("refusal_text", "I'm not sure.")),
        )

        rows = _read_jsonl(_input_file(Path(args.prompts), "prompts file"))
        prompts = []
        for i, row in enumerate(rows):
            text = row.get("prompt", row.get("text"))
            if text is None:
                raise RuntimeError(f"{args.prompts}: row {i + 1} has no prompt field")
            prompts.append(Prompt(text=text, prompt_id=str(row.get("id", i))))

        outcomes = guard_batch(prompts, handles, guard_cfg)
        out_path = Path(args.out)
        with out_path.open("w") as fh:
            for outcome in outcomes:
                fh.write(json.dumps(outcome.to_json_dict()) + "\n")
        failures = sum(1 for o in outcomes if o.error is not None)
        forget = sum(1 for o in outcomes if o.route == Split.FORGET)
        blocked = sum(1 for o in outcomes if o.blocked)
        print(
            f"{len(outcomes)} prompts: {forget} forget-routed, "
            f"{blocked} blocked, {failures} failed -> {out_path}"
        )
        return 1 if failures else 0
    finally:
        runtime.close()


def _scored_rows(
    path: Path, max_n: int
) -> tuple[list[ScoredAnswer], Optional[list[float]], list[str]]:
    scored = []
    ratios: list[float] = []
    ids: list[str] = []
    have_ratios = True
    for i, row in enumerate(_read_jsonl(path)):
        if "reference" not in row or "hypothesis" not in row:
            raise RuntimeError(f"{path}: rows need reference and hypothesis fields")
        ids.append(str(row.get("id", i)))
        scored.append(
            ScoredAnswer.score(
                question=row.get("question", ""),
                reference=row["reference"],
                hypothesis=row["hypothesis"],
                max_n=max_n,
            )
        )
        if "truth_ratio" in row:
            ratios.append(float(row["truth_ratio"]))
        else:
            have_ratios = False
    if not scored:
        raise RuntimeError(f"{path}: no rows")
    return scored, (ratios if have_ratios else None), ids


def cmd_evaluate(cfg: dict, args: argparse.Namespace) -> int:
    section = cfg.get("evaluate") or {}
    max_n = int(section.get("bleu_max_n", 4))
    unlearned, u_ratios, u_ids = _scored_rows(
        _input_file(Path(args.unlearned), "unlearned outputs"), max_n
    )
    retained, r_ratios, r_ids = _scored_rows(
        _input_file(Path(args.retained), "retained outputs"), max_n
    )
    if len(u_ids) != len(r_ids):
        raise RuntimeError(
            f"misaligned outputs: {len(u_ids)} unlearned rows vs {len(r_ids)} retained"
        )
    for uid, rid in zip(u_ids, r_ids):
        if uid != rid:
            raise RuntimeError(f"misaligned outputs: id {uid!r} vs {rid!r}")
    report = build_report(
        unlearned,
        retained,
        unlearned_truth_ratios=u_ratios,
        retained_truth_ratios=r_ratios,
        utility_scores=section.get("utility_scores"),
        member_nonmember_scores=section.get("membership_scores"),
    )
    payload = report.to_json_dict()
    Path(args.out).write_text(json.dumps(payload, indent=2))
    for key, value in payload.items():
        print(f"{key}: {value}")
    return 0


def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="guardgen", description="Guarded generation over a forget set."
    )
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True)
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--backend", choices=["toy", "bridge"], help="overrides the backend")

    p_train = sub.add_parser("train-classifier", parents=[common], help="fit the routing gate")
    p_train.add_argument("--out", help="parameter JSON output path")

    p_index = sub.add_parser("build-index", parents=[common], help="embed the forget records")
    p_index.add_argument("--out", help="index JSON output path")

    p_gen = sub.add_parser("generate", parents=[common], help="guarded generation over prompts")
    p_gen.add_argument("--prompts", required=True, help="JSONL with prompt/id fields")
    p_gen.add_argument("--out", required=True, help="JSONL of outcomes")

    p_eval = sub.add_parser(
        "evaluate", parents=[common], help="score unlearned vs retained outputs"
    )
    p_eval.add_argument("--unlearned", required=True)
    p_eval.add_argument("--retained", required=True)
    p_eval.add_argument("--out", required=True)

    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING))
    handlers = {
        "train-classifier": cmd_train_classifier,
        "build-index": cmd_build_index,
        "generate": cmd_generate,
        "evaluate": cmd_evaluate,
    }
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.backend is not None:
            cfg["backend"] = args.backend
        return handlers[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (RuntimeError, InvalidInput, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
