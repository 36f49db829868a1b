import json
from pathlib import Path

import numpy as np
import pytest

from appreply import pipeline
from appreply.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main
from appreply.corpus import CleanRecord, Vocab, read_pairs
from appreply.decoding import greedy_decode
from appreply.evalmetrics import evaluate_corpus
from appreply.model import Example
from appreply.training import TrainingDiverged, load_model

FIXTURE = Path(__file__).parent / "fixtures" / "tiny_corpus.jsonl"
TINY = "d = 8\nE = 8\nlayers = 1\nepochs = 1\nbatch_size = 4\nresponse_len = 16\nval_max_len = 8\nbeam = 2\n"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def built(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.cfg"
    cfg.write_text(TINY)
    corpus, index, run_dir = root / "corpus", root / "index.bin", root / "run"
    assert main(["preprocess", str(FIXTURE), str(corpus)]) == EXIT_OK
    assert main(["index", str(corpus), "--index-path", str(index)]) == EXIT_OK
    assert main(["train", str(corpus), "--index-path", str(index), "--config", str(cfg),
                 "--out-dir", str(run_dir)]) == EXIT_OK
    return root, cfg, corpus, index, run_dir


class TestPreprocess:
    def test_fixture_counts(self, built, capsys, tmp_path):
        code, out, _ = run(capsys, "preprocess", FIXTURE, tmp_path / "c")
        counts = json.loads(out)
        assert code == EXIT_OK
        # 10 linked pairs, two of them with reviews below the minimum length
        assert counts["pairs"] == 8 and counts["review_dropped"] == 2
        assert counts["unpaired_reviews"] == 2
        assert sum(len(read_pairs(tmp_path / "c" / f"{s}.jsonl")) for s in pipeline.SPLITS) == 8

    def test_empty_input(self, capsys, tmp_path):
        src = tmp_path / "empty.jsonl"
        src.write_text("")
        code, out, _ = run(capsys, "preprocess", src, tmp_path / "c")
        assert code == EXIT_OK and json.loads(out)["pairs"] == 0
        for s in pipeline.SPLITS:
            assert (tmp_path / "c" / f"{s}.jsonl").read_text() == ""

    def test_missing_input_is_io_error(self, capsys, tmp_path):
        assert run(capsys, "preprocess", tmp_path / "nope.jsonl", tmp_path / "c")[0] == EXIT_DATA


class TestIndex:
    def test_stats_match_hand_counts(self, built, capsys, tmp_path):
        _, _, corpus, _, _ = built
        docs = [a["description"] for a in json.loads((corpus / "apps.json").read_text()).values()]
        for s in pipeline.SPLITS:
            docs += [p.review_tokens for p in read_pairs(corpus / f"{s}.jsonl")]
        docs += [CleanRecord(**json.loads(x)).tokens for x in (corpus / "unpaired.jsonl").read_text().splitlines()]
        code, out, _ = run(capsys, "index", corpus, "--index-path", tmp_path / "i.bin")
        stats = json.loads(out)
        assert code == EXIT_OK
        assert stats["N"] == len(docs) == 2 + 8 + 2
        assert stats["terms"] == len({t for d in docs for t in d})
        assert stats["avgdl"] == pytest.approx(sum(map(len, docs)) / len(docs), rel=1e-12)

    def test_rerun_byte_identical(self, built, tmp_path):
        _, _, corpus, index, _ = built
        assert main(["index", str(corpus), "--index-path", str(tmp_path / "again.bin")]) == EXIT_OK
        assert (tmp_path / "again.bin").read_bytes() == index.read_bytes()

    def test_empty_corpus_errors(self, capsys, tmp_path):
        src = tmp_path / "empty.jsonl"
        src.write_text("")
        main(["preprocess", str(src), str(tmp_path / "c")])
        code, _, err = run(capsys, "index", tmp_path / "c", "--index-path", tmp_path / "i.bin")
        assert code == EXIT_DATA and "no documents" in err

    def test_missing_description_warns(self, capsys, tmp_path):
        lines = [x for x in FIXTURE.read_text().splitlines() if '"description"' not in x or "radio" not in x]
        src = tmp_path / "c.jsonl"
        src.write_text("\n".join(lines) + "\n")
        run(capsys, "preprocess", src, tmp_path / "c")
        code, out, err = run(capsys, "index", tmp_path / "c", "--index-path", tmp_path / "i.bin")
        assert code == EXIT_OK and "radio" in err and json.loads(out)["missing_descriptions"] == ["radio"]


class TestTrain:
    def test_writes_loadable_checkpoint(self, built):
        *_, run_dir = built
        model, meta = load_model(run_dir / "model.ckpt")
        assert model.config.d == 8 and Vocab(meta["vocab"]).size == model.config.vocab_size
        report = json.loads((run_dir / "report.json").read_text())
        assert len(report["epoch_losses"]) == 1
        assert len((run_dir / "train_log.jsonl").read_text().splitlines()) == 1

    def test_plain_seq2seq_flags(self, built, tmp_path):
        _, cfg, corpus, index, _ = built
        argv = ["train", str(corpus), "--index-path", str(index), "--config", str(cfg), "--out-dir",
                str(tmp_path), "--no-snippets", "--no-rating", "--no-category", "--fusion-mode", "weighted_columns"]
        assert main(argv) == EXIT_OK
        c = load_model(tmp_path / "model.ckpt")[0].config
        assert not (c.use_rating or c.use_category or c.use_reviews or c.use_description)
        assert c.fusion_mode == "weighted_columns"

    def test_divergence_exit_code(self, built, capsys, monkeypatch, tmp_path):
        _, cfg, corpus, index, _ = built

        def boom(*a, **k):
            raise TrainingDiverged("loss is nan at step 0")

        monkeypatch.setattr(pipeline, "run_train", boom)
        code, _, err = run(capsys, "train", corpus, "--index-path", index, "--out-dir", tmp_path)
        assert code == EXIT_NUMERIC and "nan" in err

    def test_bad_config_is_usage_error(self, built, capsys, tmp_path):
        _, _, corpus, index, _ = built
        bad = tmp_path / "bad.cfg"
        bad.write_text("wings = 2\n")
        assert run(capsys, "train", corpus, "--index-path", index, "--config", bad)[0] == EXIT_USAGE


class TestGenerateEvaluate:
    def gen(self, built, capsys, *extra):
        _, _, _, index, run_dir = built
        return run(capsys, "generate", "--index-path", index, "--checkpoint", run_dir / "model.ckpt",
                   "--app-id", "notes", "--review", "My notes never sync to the tablet!", *extra)

    def test_same_inputs_same_response(self, built, capsys):
        a = self.gen(built, capsys)
        assert a[0] == EXIT_OK and a == self.gen(built, capsys)

    def test_beam_one_is_greedy(self, built):
        _, _, _, index, run_dir = built
        out = pipeline.respond(run_dir / "model.ckpt", index, "my notes never sync", "notes", 2, beam=1)
        model, meta = load_model(run_dir / "model.ckpt")
        vocab = Vocab(meta["vocab"])
        idx = pipeline.load_index(index)
        toks = ["my", "notes", "never", "sync"]
        snips = [np.array(vocab.encode(s)) for s in pipeline.snippets_for(idx, toks, "notes", model.config)]
        ex = Example(np.array(vocab.encode(toks)), 2, snips,
                     np.array(vocab.encode(meta["categories"]["notes"])))
        assert out == vocab.decode(greedy_decode(model, ex, model.config.response_len))

    def test_unknown_app(self, built, capsys):
        _, _, _, index, run_dir = built
        code, _, err = run(capsys, "generate", "--index-path", index, "--checkpoint", run_dir / "model.ckpt",
                           "--app-id", "ghost", "--review", "does not work at all")
        assert code == EXIT_DATA and "ghost" in err

    def test_evaluate_report(self, built, capsys, tmp_path):
        _, cfg, corpus, index, run_dir = built
        code, out, _ = run(capsys, "evaluate", corpus, "--index-path", index, "--checkpoint",
                           run_dir / "model.ckpt", "--config", cfg, "--split", "train", "--out", tmp_path / "r.json")
        rep = json.loads(out)
        assert code == EXIT_OK and {"bleu4", "p1", "p2", "p3", "p4", "rouge_l"} <= set(rep)
        assert json.loads((tmp_path / "r.json").read_text()) == rep

    def test_sentence_average_flag(self, built, capsys):
        _, cfg, corpus, index, run_dir = built
        args = ["evaluate", corpus, "--index-path", index, "--checkpoint", run_dir / "model.ckpt",
                "--config", cfg, "--split", "train", "--beam", 1]
        corpus_level = json.loads(run(capsys, *args)[1])
        averaged = json.loads(run(capsys, *args, "--sentence-average")[1])
        assert averaged["p1"] == corpus_level["p1"] and averaged["rouge_l"] == corpus_level["rouge_l"]

    def test_self_evaluation_is_perfect(self, built):
        _, _, corpus, _, _ = built
        refs = [p.response_tokens for p in read_pairs(corpus / "train.jsonl")]
        rep = evaluate_corpus(refs, refs)
        assert rep.bleu4 == 100.0 and rep.rouge_l == 100.0


def test_pipeline_rerun_identical(built, tmp_path):
    _, cfg, *_ = built
    reports = []
    for tag in ("a", "b"):
        d = tmp_path / tag
        for argv in (["preprocess", FIXTURE, d / "c", "--seed", 5],
                     ["index", d / "c", "--index-path", d / "i.bin"],
                     ["train", d / "c", "--index-path", d / "i.bin", "--config", cfg, "--out-dir", d / "run", "--seed", 5],
                     ["evaluate", d / "c", "--index-path", d / "i.bin", "--checkpoint", d / "run" / "model.ckpt",
                      "--config", cfg, "--out", d / "eval.json"]):
            assert main([str(a) for a in argv]) == EXIT_OK
        report = json.loads((d / "run" / "report.json").read_text())
        report.pop("checkpoint_path")
        reports.append((report, (d / "eval.json").read_bytes(), (d / "i.bin").read_bytes(),
                        (d / "run" / "model.ckpt").read_bytes()))
    assert reports[0] == reports[1]


def test_synthgen(capsys, tmp_path):
    code, out, _ = run(capsys, "synthgen", tmp_path / "s.jsonl", "--apps", 3, "--reviews-per-app", 5,
                       "--fact-vocab", 8, "--seed", 1)
    assert code == EXIT_OK and json.loads(out)["apps"] == 3
    assert len((tmp_path / "s.jsonl").read_text().splitlines()) == json.loads(out)["records"]
    assert run(capsys, "synthgen", tmp_path / "t.jsonl", "--apps", 0)[0] == EXIT_USAGE


def test_usage_errors(capsys):
    with pytest.raises(SystemExit) as e:
        main(["train"])
    assert e.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as e:
        main(["frobnicate"])
    assert e.value.code == EXIT_USAGE
