import json
import math
from pathlib import Path

import pytest
import scipy.special

from guardgen.classifier import load_parameters
from guardgen.cli import main
from guardgen.core import BigramModel, ToyTokenizer, load_vocab
from guardgen.decoder import DecodeConfig
from guardgen.matching import SoftMatchConfig
from guardgen.pipeline import unconstrained_decode
from guardgen.retrieval import load_index

WORDS = ["<unk>", "the", "what", "is", "secret", "city", "paris", "lutetia",
         "nice", "civil", "engineer", "job", "a", "good", "</s>"]
CITY, PARIS, LUTETIA, NICE = 5, 6, 7, 8
CIVIL, ENGINEER, JOB, A, GOOD, EOS = 9, 10, 11, 12, 13, 14

BIGRAM_ROWS = [
    (CITY, PARIS, 0.5), (CITY, LUTETIA, 0.3), (CITY, NICE, 0.15), (CITY, EOS, 0.05),
    (PARIS, EOS, 1.0), (LUTETIA, EOS, 1.0), (NICE, EOS, 1.0),
    (JOB, CIVIL, 0.7), (JOB, GOOD, 0.2), (JOB, A, 0.1),
    (CIVIL, ENGINEER, 0.9), (CIVIL, EOS, 0.1),
    (ENGINEER, EOS, 1.0), (GOOD, EOS, 1.0), (A, GOOD, 1.0),
]

FORGET_TEXTS = ["what is the secret city", "what is the secret job",
                "the secret city", "secret job", "the secret"]
RETAIN_TEXTS = ["what is the city", "what is the job", "the good job",
                "a good city", "what is good"]


def write_jsonl(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    ws = tmp_path_factory.mktemp("cli")
    (ws / "vocab.txt").write_text("\n".join(WORDS) + "\n")
    (ws / "bigram.txt").write_text(
        "# prev next prob\n" + "".join(f"{p} {n} {pr}\n" for p, n, pr in BIGRAM_ROWS)
    )
    write_jsonl(
        ws / "train.jsonl",
        [{"label": 1, "text": t} for t in FORGET_TEXTS]
        + [{"label": 0, "text": t} for t in RETAIN_TEXTS],
    )
    write_jsonl(
        ws / "forget.jsonl",
        [
            {"question": "what is the secret city", "answer": "paris", "split": "forget"},
            {"question": "what is the secret job", "answer": "a civil engineer"},
        ],
    )
    table = {}
    for i, w in enumerate(WORDS):
        vec = [0.0] * len(WORDS)
        vec[i] = 1.0
        table[w] = vec
    tilted = [0.0] * len(WORDS)
    tilted[PARIS] = 0.894427190999916
    tilted[LUTETIA] = 0.447213595499958
    table["lutetia"] = tilted
    (ws / "sem_table.json").write_text(json.dumps(table))
    config = {
        "backend": "toy",
        "model": {"vocab_file": "vocab.txt", "bigram_file": "bigram.txt"},
        "embedders": {"semantic": {"kind": "table", "table_file": "sem_table.json"}},
        "classifier": {
            "train_file": "train.jsonl", "params_file": "params.json",
            "hidden_dim": 16, "learning_rate": 0.1, "epochs": 300,
        },
        "retrieval": {"forget_file": "forget.jsonl", "index_file": "index.json",
                      "key": "question"},
        "decode": {"beam_width": 4, "max_new_tokens": 4, "delta": 0.8},
        "extraction": {"kind": "all_words"},
    }
    (ws / "config.json").write_text(json.dumps(config))
    write_jsonl(
        ws / "prompts.jsonl",
        [
            {"id": "secret-city", "prompt": "what is the secret city"},
            {"id": "secret-job", "prompt": "what is the secret job"},
            {"id": "plain-city", "prompt": "what is the city"},
            {"text": "what is the job"},  # id defaults to the row position
        ],
    )
    assert main(["train-classifier", "--config", str(ws / "config.json")]) == 0
    assert main(["build-index", "--config", str(ws / "config.json")]) == 0
    return ws


class TestTrainClassifier:
    def test_artifacts_and_report(self, workspace):
        params = load_parameters(workspace / "params.json")
        assert params.input_dim == len(WORDS)
        report = json.loads((workspace / "params.json.report.json").read_text())
        assert report["examples"] == 10
        assert report["threshold"] == 0.5
        assert report["fnr"] == 0.0
        assert report["fpr"] == 0.0

    def test_rerun_is_byte_identical(self, workspace, tmp_path):
        out = tmp_path / "again.json"
        code = main(["train-classifier", "--config", str(workspace / "config.json"),
                     "--out", str(out)])
        assert code == 0
        assert out.read_bytes() == (workspace / "params.json").read_bytes()

    def test_seed_override_changes_parameters(self, workspace, tmp_path):
        outs = {}
        for seed in (1, 2, 1):
            out = tmp_path / f"s{seed}-{len(outs)}.json"
            assert main(["train-classifier", "--config", str(workspace / "config.json"),
                         "--seed", str(seed), "--out", str(out)]) == 0
            outs.setdefault(seed, []).append(out.read_bytes())
        assert outs[1][0] == outs[1][1]
        assert outs[1][0] != outs[2][0]

    def test_missing_train_file_is_usage_error(self, workspace, tmp_path, capsys):
        cfg = json.loads((workspace / "config.json").read_text())
        cfg["classifier"]["train_file"] = "nope.jsonl"
        path = tmp_path / "config.json"
        path.write_text(json.dumps(cfg))
        assert main(["train-classifier", "--config", str(path)]) == 2
        assert "not found" in capsys.readouterr().err


class TestBuildIndex:
    def test_index_loadable(self, workspace):
        index = load_index(workspace / "index.json")
        assert len(index.records) == 2
        assert index.key == "question"
        assert index.records[0].answer == "paris"

    def test_missing_forget_file_is_usage_error(self, workspace, tmp_path):
        cfg = json.loads((workspace / "config.json").read_text())
        cfg["retrieval"]["forget_file"] = "missing.jsonl"
        path = tmp_path / "config.json"
        path.write_text(json.dumps(cfg))
        assert main(["build-index", "--config", str(path)]) == 2


class TestGenerate:
    def run(self, workspace, tmp_path, prompts_name="prompts.jsonl", config=None):
        out = tmp_path / "outcomes.jsonl"
        code = main([
            "generate", "--config", str(config or workspace / "config.json"),
            "--prompts", str(workspace / prompts_name), "--out", str(out),
        ])
        rows = [json.loads(ln) for ln in out.read_text().splitlines()] if out.exists() else None
        return code, rows

    def test_guarded_outputs(self, workspace, tmp_path):
        code, rows = self.run(workspace, tmp_path)
        assert code == 0
        by_id = {r["prompt_id"]: r for r in rows}
        assert set(by_id) == {"secret-city", "secret-job", "plain-city", "3"}
        assert by_id["secret-city"]["route"] == "forget"
        assert by_id["secret-city"]["output"] == "nice"
        assert by_id["secret-job"]["output"] == "good"
        assert by_id["secret-job"]["forbidden_span_count"] == 3
        assert by_id["plain-city"]["route"] == "retain"
        assert by_id["plain-city"]["output"] == "paris"
        assert by_id["3"]["output"] == "civil engineer"
        assert all(r["error"] is None for r in rows)

    def test_retain_route_matches_library_decode(self, workspace, tmp_path):
        _, rows = self.run(workspace, tmp_path)
        tok = ToyTokenizer(load_vocab(workspace / "vocab.txt"))
        model = BigramModel.from_file(workspace / "bigram.txt", tok.vocab_size)
        cfg = DecodeConfig(eos_token=EOS, beam_width=4, max_new_tokens=4,
                           soft=SoftMatchConfig(alpha_sbert=1.0, delta=0.8))
        plain = unconstrained_decode(model, tok, "what is the city", cfg)
        want = tok.detokenize([t for t in plain.best if t != EOS])
        by_id = {r["prompt_id"]: r for r in rows}
        assert by_id["plain-city"]["output"] == want

    def test_empty_prompts_file(self, workspace, tmp_path):
        write_jsonl(workspace / "empty.jsonl", [])
        code, rows = self.run(workspace, tmp_path, prompts_name="empty.jsonl")
        assert code == 0
        assert rows == []

    def test_forget_prompt_without_index_fails_per_item(self, workspace, tmp_path):
        cfg = json.loads((workspace / "config.json").read_text())
        del cfg["retrieval"]["index_file"]
        path = tmp_path / "config.json"
        path.write_text(json.dumps(cfg))
        # config paths resolve against the config directory
        cfg["model"] = {k: str(workspace / v) for k, v in cfg["model"].items()}
        cfg["embedders"]["semantic"]["table_file"] = str(workspace / "sem_table.json")
        cfg["classifier"]["train_file"] = str(workspace / "train.jsonl")
        cfg["classifier"]["params_file"] = str(workspace / "params.json")
        cfg["retrieval"]["forget_file"] = str(workspace / "forget.jsonl")
        path.write_text(json.dumps(cfg))
        code, rows = self.run(workspace, tmp_path, config=path)
        assert code == 1
        by_id = {r["prompt_id"]: r for r in rows}
        assert "retrieve" in by_id["secret-city"]["error"]
        assert by_id["secret-city"]["blocked"] is True
        assert by_id["plain-city"]["error"] is None
        assert by_id["plain-city"]["output"] == "paris"

    def test_missing_prompts_file_is_usage_error(self, workspace, tmp_path):
        out = tmp_path / "out.jsonl"
        code = main(["generate", "--config", str(workspace / "config.json"),
                     "--prompts", str(workspace / "no-such.jsonl"), "--out", str(out)])
        assert code == 2

    def test_row_without_prompt_field_fails_run(self, workspace, tmp_path):
        write_jsonl(workspace / "bad_prompts.jsonl", [{"id": "x"}])
        code, _ = self.run(workspace, tmp_path, prompts_name="bad_prompts.jsonl")
        assert code == 1

    def test_resolution_is_config_relative(self, workspace, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        code, rows = self.run(workspace, tmp_path)
        assert code == 0
        assert len(rows) == 4


class TestConfigValidation:
    def test_unknown_top_level_key(self, tmp_path, capsys):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"modle": {}}))
        assert main(["train-classifier", "--config", str(path)]) == 2
        assert "unknown key" in capsys.readouterr().err

    def test_unknown_section_key(self, workspace, tmp_path):
        cfg = json.loads((workspace / "config.json").read_text())
        cfg["decode"]["beem_width"] = 3
        path = tmp_path / "config.json"
        path.write_text(json.dumps(cfg))
        assert main(["train-classifier", "--config", str(path)]) == 2

    def test_missing_config_file(self, tmp_path):
        assert main(["build-index", "--config", str(tmp_path / "none.json")]) == 2

    def test_config_not_json(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text("{oops")
        assert main(["build-index", "--config", str(path)]) == 2

    def test_unknown_eos_word_rejected(self, workspace, tmp_path):
        cfg = json.loads((workspace / "config.json").read_text())
        cfg["model"] = {k: str(workspace / v) for k, v in cfg["model"].items()}
        cfg["embedders"]["semantic"]["table_file"] = str(workspace / "sem_table.json")
        cfg["classifier"]["params_file"] = str(workspace / "params.json")
        cfg["retrieval"] = {}
        cfg["decode"]["eos_token"] = "zzz"
        path = tmp_path / "config.json"
        path.write_text(json.dumps(cfg))
        out = tmp_path / "out.jsonl"
        code = main(["generate", "--config", str(path),
                     "--prompts", str(workspace / "prompts.jsonl"), "--out", str(out)])
        assert code == 2

    def test_eos_id_out_of_range_rejected(self, workspace, tmp_path):
        cfg = json.loads((workspace / "config.json").read_text())
        cfg["model"] = {k: str(workspace / v) for k, v in cfg["model"].items()}
        cfg["embedders"]["semantic"]["table_file"] = str(workspace / "sem_table.json")
        cfg["classifier"]["params_file"] = str(workspace / "params.json")
        cfg["retrieval"] = {}
        cfg["decode"]["eos_token"] = 99
        path = tmp_path / "config.json"
        path.write_text(json.dumps(cfg))
        out = tmp_path / "out.jsonl"
        code = main(["generate", "--config", str(path),
                     "--prompts", str(workspace / "prompts.jsonl"), "--out", str(out)])
        assert code == 2

    def test_backend_override_takes_effect(self, workspace, tmp_path, capsys):
        out = tmp_path / "out.jsonl"
        code = main(["generate", "--config", str(workspace / "config.json"),
                     "--backend", "bridge",
                     "--prompts", str(workspace / "prompts.jsonl"), "--out", str(out)])
        assert code == 2
        assert "bridge" in capsys.readouterr().err


# golden scoring fixture: the clipped-BLEU pair, one identical pair, one
# disjoint pair, with hand-picked truth ratios and membership scores
REF_CLIP = "the cat sat on the mat"
HYP_CLIP = "the cat sat sat sat on mat"
BLEU_CLIP = 0.002907153684841097
ROUGE_CLIP = 5.0 / 6.0


class TestEvaluate:
    def eval_config(self, tmp_path, with_sections):
        cfg = {"evaluate": {
            "utility_scores": [0.5, 1.0],
            "membership_scores": {
                "unlearned_member": [1.0, 2.0],
                "unlearned_nonmember": [0.0, 0.5],
                "retained_member": [1.0, 1.5],
                "retained_nonmember": [0.5, 2.0],
            },
        }} if with_sections else {}
        path = tmp_path / "eval_config.json"
        path.write_text(json.dumps(cfg))
        return path

    def rows_identical(self):
        return [
            {"id": "r0", "reference": REF_CLIP, "hypothesis": REF_CLIP, "truth_ratio": 0.2},
            {"id": "r1", "reference": REF_CLIP, "hypothesis": HYP_CLIP, "truth_ratio": 0.4},
        ]

    def test_identical_outputs_score_perfect(self, tmp_path, capsys):
        u, r = tmp_path / "u.jsonl", tmp_path / "r.jsonl"
        write_jsonl(u, self.rows_identical())
        write_jsonl(r, self.rows_identical())
        out = tmp_path / "report.json"
        code = main(["evaluate", "--config", str(self.eval_config(tmp_path, False)),
                     "--unlearned", str(u), "--retained", str(r), "--out", str(out)])
        assert code == 0
        report = json.loads(out.read_text())
        assert report["fq_gap"] == 0.0
        assert report["forget_quality"] == 1.0
        printed = capsys.readouterr().out
        assert "fq_gap: 0.0" in printed

    def test_golden_report_values(self, tmp_path):
        u, r = tmp_path / "u.jsonl", tmp_path / "r.jsonl"
        write_jsonl(u, [
            {"id": "0", "reference": REF_CLIP, "hypothesis": REF_CLIP, "truth_ratio": 0.2},
            {"id": "1", "reference": REF_CLIP, "hypothesis": HYP_CLIP, "truth_ratio": 0.4},
        ])
        write_jsonl(r, [
            {"id": "0", "reference": "alpha beta", "hypothesis": "gamma delta",
             "truth_ratio": 0.3},
            {"id": "1", "reference": REF_CLIP, "hypothesis": REF_CLIP, "truth_ratio": 0.5},
        ])
        out = tmp_path / "report.json"
        code = main(["evaluate", "--config", str(self.eval_config(tmp_path, True)),
                     "--unlearned", str(u), "--retained", str(r), "--out", str(out)])
        assert code == 0
        report = json.loads(out.read_text())
        u_bleu = (1.0 + BLEU_CLIP) / 2.0
        u_rouge = (1.0 + ROUGE_CLIP) / 2.0
        assert report["unlearned_mean_bleu"] == pytest.approx(u_bleu, abs=1e-9)
        assert report["unlearned_mean_rouge_recall"] == pytest.approx(u_rouge, abs=1e-9)
        assert report["retained_mean_bleu"] == pytest.approx(0.5, abs=1e-9)
        assert report["retained_mean_rouge_recall"] == pytest.approx(0.5, abs=1e-9)
        assert report["fq_gap"] == pytest.approx(
            abs(u_bleu - 0.5) + abs(u_rouge - 0.5), abs=1e-9
        )
        # truth ratios interleave at D = 1/2 with n_eff = 1
        assert report["forget_quality"] == pytest.approx(
            scipy.special.kolmogorov(math.sqrt(1.0) * 0.5), abs=1e-9
        )
        assert report["model_utility"] == pytest.approx(2.0 / 3.0, abs=1e-12)
        assert report["auc_unlearned"] == pytest.approx(1.0)
        assert report["auc_retained"] == pytest.approx(0.5)
        assert report["priv_leak"] == pytest.approx(100.0, abs=1e-9)

    def test_missing_retained_file_is_usage_error(self, tmp_path, capsys):
        u = tmp_path / "u.jsonl"
        write_jsonl(u, self.rows_identical())
        code = main(["evaluate", "--config", str(self.eval_config(tmp_path, False)),
                     "--unlearned", str(u), "--retained", str(tmp_path / "gone.jsonl"),
                     "--out", str(tmp_path / "report.json")])
        assert code == 2
        assert "not found" in capsys.readouterr().err

    def test_misaligned_ids_fail_naming_the_id(self, tmp_path, capsys):
        u, r = tmp_path / "u.jsonl", tmp_path / "r.jsonl"
        write_jsonl(u, [{"id": "a", "reference": "x y", "hypothesis": "x y"}])
        write_jsonl(r, [{"id": "b", "reference": "x y", "hypothesis": "x y"}])
        code = main(["evaluate", "--config", str(self.eval_config(tmp_path, False)),
                     "--unlearned", str(u), "--retained", str(r),
                     "--out", str(tmp_path / "report.json")])
        assert code == 1
        assert "'a'" in capsys.readouterr().err

    def test_length_mismatch_fails(self, tmp_path):
        u, r = tmp_path / "u.jsonl", tmp_path / "r.jsonl"
        write_jsonl(u, [{"id": "a", "reference": "x", "hypothesis": "x"}])
        write_jsonl(r, [{"id": "a", "reference": "x", "hypothesis": "x"},
                        {"id": "b", "reference": "x", "hypothesis": "x"}])
        code = main(["evaluate", "--config", str(self.eval_config(tmp_path, False)),
                     "--unlearned", str(u), "--retained", str(r),
                     "--out", str(tmp_path / "report.json")])
        assert code == 1

    def test_rows_without_truth_ratio_skip_forget_quality(self, tmp_path):
        u, r = tmp_path / "u.jsonl", tmp_path / "r.jsonl"
        write_jsonl(u, [{"id": "0", "reference": "x y", "hypothesis": "x y"}])
        write_jsonl(r, [{"id": "0", "reference": "x y", "hypothesis": "x y"}])
        out = tmp_path / "report.json"
        code = main(["evaluate", "--config", str(self.eval_config(tmp_path, False)),
                     "--unlearned", str(u), "--retained", str(r), "--out", str(out)])
        assert code == 0
        assert "forget_quality" not in json.loads(out.read_text())
