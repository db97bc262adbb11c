"""CLI behavior: splits, training, evaluation, auditing, exit codes."""

import json
from pathlib import Path

import numpy as np
import pytest

from topdec import (
    build_node_set,
    build_vocabulary,
    load_vocabulary,
    read_partial_examples,
    save_vocabulary,
    write_examples,
)
from topdec.cli import main
from topdec.decoder import save_matrix
from topdec.synth import grammar_dataset
from topdec.top_ir import SupervisionMode, read_examples

from conftest import random_matrix


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    train = root / "train.tsv"
    test = root / "test.tsv"
    write_examples(train, grammar_dataset(80, seed=31))
    write_examples(test, grammar_dataset(20, seed=32))
    return train, test


@pytest.fixture(scope="module")
def trained(dataset, tmp_path_factory):
    train, _ = dataset
    out = tmp_path_factory.mktemp("model")
    ckpt = out / "model.ckpt"
    code = main(
        [
            "train",
            "--data",
            str(train),
            "--out",
            str(ckpt),
            "--steps",
            "600",
            "--dropout",
            "0",
            "--save-vocab",
            str(out / "vocab.txt"),
        ]
    )
    assert code == 0
    return ckpt, out / "vocab.txt"


class TestSplit:
    def test_100_0_0_identity(self, dataset, tmp_path, capsys):
        train, _ = dataset
        assert main(
            ["split", "--data", str(train), "--out-dir", str(tmp_path),
             "--full", "100", "--term", "0", "--nonterm", "0", "--seed", "1"]
        ) == 0
        rows = read_partial_examples(tmp_path / "full.tsv")
        assert len(rows) == 80
        assert all(r.mode is SupervisionMode.FULL for r in rows)
        originals = {(ex.tokens, ex.tree) for ex in read_examples(train)}
        assert {(r.tokens, r.partial.tree) for r in rows} == originals

    def test_floor_division_remainder_to_largest(self, tmp_path, capsys):
        write_examples(tmp_path / "d.tsv", grammar_dataset(28414 // 100, seed=2))
        # 284 examples at 10/90/0: floor gives 28 + 255 = 283, remainder -> term
        assert main(
            ["split", "--data", str(tmp_path / "d.tsv"), "--out-dir", str(tmp_path / "s"),
             "--full", "10", "--term", "90", "--nonterm", "0", "--seed", "0"]
        ) == 0
        full = read_partial_examples(tmp_path / "s" / "full.tsv")
        term = read_partial_examples(tmp_path / "s" / "term.tsv")
        nonterm = read_partial_examples(tmp_path / "s" / "nonterm.tsv")
        assert (len(full), len(term), len(nonterm)) == (28, 256, 0)

    def test_sizes_sum(self, dataset, tmp_path):
        train, _ = dataset
        assert main(
            ["split", "--data", str(train), "--out-dir", str(tmp_path),
             "--full", "2", "--term", "49", "--nonterm", "49", "--seed", "5"]
        ) == 0
        total = sum(
            len(read_partial_examples(tmp_path / f"{name}.tsv"))
            for name in ("full", "term", "nonterm")
        )
        assert total == 80

    def test_bad_percentages_exit_code(self, dataset, tmp_path, capsys):
        train, _ = dataset
        code = main(
            ["split", "--data", str(train), "--out-dir", str(tmp_path),
             "--full", "50", "--term", "20", "--nonterm", "20"]
        )
        assert code == 1

    def test_split_rows_round_trip(self, dataset, tmp_path):
        train, _ = dataset
        assert main(
            ["split", "--data", str(train), "--out-dir", str(tmp_path),
             "--full", "0", "--term", "50", "--nonterm", "50", "--seed", "3"]
        ) == 0
        # reading back parses every row; writing again is byte-identical
        for name in ("term", "nonterm"):
            path = tmp_path / f"{name}.tsv"
            rows = read_partial_examples(path)
            from topdec.top_ir import write_partial_examples

            write_partial_examples(tmp_path / "again.tsv", rows)
            assert (tmp_path / "again.tsv").read_bytes() == path.read_bytes()

    def test_deterministic_given_seed(self, dataset, tmp_path):
        train, _ = dataset
        for sub in ("a", "b"):
            assert main(
                ["split", "--data", str(train), "--out-dir", str(tmp_path / sub),
                 "--full", "30", "--term", "40", "--nonterm", "30", "--seed", "9"]
            ) == 0
        for name in ("full", "term", "nonterm"):
            assert (tmp_path / "a" / f"{name}.tsv").read_bytes() == (
                tmp_path / "b" / f"{name}.tsv"
            ).read_bytes()


class TestTrainEval:
    def test_trained_checkpoint_evaluates(self, dataset, trained, tmp_path, capsys):
        _, test = dataset
        ckpt, vocab_path = trained
        code = main(
            ["eval", "--checkpoint", str(ckpt), "--data", str(test),
             "--out-preds", str(tmp_path / "preds.tsv"), "--vocab", str(vocab_path)]
        )
        assert code == 0
        report = capsys.readouterr().out
        lines = dict(
            line.split("\t", 1) for line in report.strip().splitlines() if "\t" in line
        )
        assert lines["examples"] == "20"
        accuracy = float(lines["exact_match"])
        assert 0.0 <= accuracy <= 1.0
        preds = (tmp_path / "preds.tsv").read_text().strip().splitlines()
        assert len(preds) == 20
        first = preds[0].split("\t")
        assert first[0] == "0" and len(first) == 5

    def test_eval_accuracy_matches_recount(self, dataset, trained, tmp_path, capsys):
        _, test = dataset
        ckpt, _ = trained
        main(
            ["eval", "--checkpoint", str(ckpt), "--data", str(test),
             "--out-preds", str(tmp_path / "preds.tsv")]
        )
        report = capsys.readouterr().out
        accuracy = float(
            next(l.split("\t")[1] for l in report.splitlines() if l.startswith("exact_match"))
        )
        from topdec import exact_match, parse_top

        gold = read_examples(test)
        hits = 0
        for line in (tmp_path / "preds.tsv").read_text().splitlines():
            idx, tree_text = line.split("\t")[:2]
            if tree_text.startswith("<INVALID:"):
                continue
            predicted = parse_top(tree_text, gold[int(idx)].tokens)
            hits += exact_match(predicted, gold[int(idx)].tree)
        assert accuracy == pytest.approx(hits / len(gold), abs=1e-9)

    def test_inject_gold_is_perfect(self, dataset, capsys):
        _, test = dataset
        assert main(["eval", "--inject-gold", "--data", str(test)]) == 0
        report = capsys.readouterr().out
        assert "exact_match\t1.0000" in report

    def test_vocab_mismatch_exit_code(self, dataset, trained, tmp_path, capsys):
        _, test = dataset
        ckpt, _ = trained
        from topdec.symbol_table import Vocabulary
        from topdec.top_ir import intent

        other = Vocabulary((intent("IN:OTHER"),), {intent("IN:OTHER"): 1})
        save_vocabulary(tmp_path / "other.txt", other)
        code = main(
            ["eval", "--checkpoint", str(ckpt), "--data", str(test),
             "--vocab", str(tmp_path / "other.txt")]
        )
        assert code == 2

    def test_empty_dataset_exit_code(self, tmp_path, capsys):
        empty = tmp_path / "empty.tsv"
        empty.write_text("")
        code = main(["train", "--data", str(empty), "--out", str(tmp_path / "x.ckpt")])
        assert code == 2

    def test_same_seed_reproduces_trace(self, dataset, tmp_path, capsys):
        train, _ = dataset
        traces = []
        for name in ("one", "two"):
            assert main(
                ["train", "--data", str(train), "--out", str(tmp_path / f"{name}.ckpt"),
                 "--steps", "60", "--trace", str(tmp_path / f"{name}.csv")]
            ) == 0
            traces.append((tmp_path / f"{name}.csv").read_bytes())
        assert traces[0] == traces[1]
        assert (tmp_path / "one.ckpt").read_bytes() == (tmp_path / "two.ckpt").read_bytes()

    def test_config_file_supplies_defaults(self, dataset, tmp_path, capsys):
        train, _ = dataset
        config = tmp_path / "run.cfg"
        config.write_text("steps=25\nlearning_rate=0.005\n# comment\n")
        assert main(
            ["train", "--config", str(config), "--data", str(train),
             "--out", str(tmp_path / "m.ckpt"), "--trace", str(tmp_path / "t.csv")]
        ) == 0
        trace = (tmp_path / "t.csv").read_text().splitlines()
        assert len(trace) == 26  # header + 25 steps

    def test_flags_override_config(self, dataset, tmp_path, capsys):
        train, _ = dataset
        config = tmp_path / "run.cfg"
        config.write_text("steps=25\n")
        assert main(
            ["train", "--config", str(config), "--data", str(train), "--steps", "7",
             "--out", str(tmp_path / "m.ckpt"), "--trace", str(tmp_path / "t.csv")]
        ) == 0
        assert len((tmp_path / "t.csv").read_text().splitlines()) == 8


class TestDecodeCommand:
    def test_decode_score_files(self, tiny_vocab, tmp_path, capsys):
        save_vocabulary(tmp_path / "vocab.txt", tiny_vocab)
        ns = build_node_set(["x", "y"], tiny_vocab)
        rng = np.random.default_rng(3)
        paths = []
        for i in range(4):
            matrix = random_matrix(ns, rng)
            path = tmp_path / f"m{i}.json"
            save_matrix(path, matrix)
            paths.append(str(path))
        code = main(["decode", "--scores", *paths, "--vocab", str(tmp_path / "vocab.txt")])
        assert code == 0
        out = capsys.readouterr().out.strip().splitlines()
        assert len(out) == 4
        for i, line in enumerate(out):
            fields = line.split("\t")
            assert fields[0] == str(i)
            float(fields[2])  # total score parses

    def test_model_decode_dump(self, dataset, trained, tmp_path):
        _, test = dataset
        ckpt, _ = trained
        out = tmp_path / "dump.tsv"
        assert main(
            ["decode", "--checkpoint", str(ckpt), "--data", str(test), "--out", str(out)]
        ) == 0
        assert len(out.read_text().strip().splitlines()) == 20


class TestOracleAudit:
    def test_audit_report(self, tiny_vocab, tmp_path, capsys):
        save_vocabulary(tmp_path / "vocab.txt", tiny_vocab)
        ns = build_node_set(["x"], tiny_vocab, pad=1)
        rng = np.random.default_rng(6)
        paths = []
        for i in range(20):
            path = tmp_path / f"m{i}.json"
            save_matrix(path, random_matrix(ns, rng))
            paths.append(str(path))
        assert main(
            ["oracle-audit", "--scores", *paths, "--vocab", str(tmp_path / "vocab.txt")]
        ) == 0
        report = dict(
            line.split("\t", 1)
            for line in capsys.readouterr().out.strip().splitlines()
        )
        assert report["instances"] == "20"
        assert report["skipped_too_large"] == "0"
        assert int(report["exact"]) <= 20
        assert int(report["clean_exact"]) <= int(report["clean"])

    def test_too_large_counted(self, example_vocab, tmp_path, capsys):
        save_vocabulary(tmp_path / "vocab.txt", example_vocab)
        ns = build_node_set(["a", "b"], example_vocab)
        save_matrix(tmp_path / "big.json", random_matrix(ns, np.random.default_rng(1)))
        assert main(
            ["oracle-audit", "--scores", str(tmp_path / "big.json"),
             "--vocab", str(tmp_path / "vocab.txt")]
        ) == 0
        report = capsys.readouterr().out
        assert "skipped_too_large\t1" in report
        assert "instances\t0" in report

    def test_empty_input_empty_report(self, capsys):
        assert main(["oracle-audit", "--scores"]) == 0
        report = capsys.readouterr().out
        assert "instances\t0" in report


class TestStatsConvert:
    def test_stats_reports_counts(self, dataset, capsys):
        train, _ = dataset
        assert main(["stats", "--data", str(train)]) == 0
        out = capsys.readouterr().out
        assert "examples\t80" in out
        assert "symbols\t" in out

    def test_convert_round_trip(self, dataset, tmp_path, capsys):
        train, _ = dataset
        examples = read_examples(train)
        vocab = build_vocabulary(ex.tree for ex in examples)
        save_vocabulary(tmp_path / "vocab.txt", vocab)
        assert main(
            ["convert", "--mode", "top2parse", "--data", str(train),
             "--vocab", str(tmp_path / "vocab.txt"), "--line", "3",
             "--out", str(tmp_path / "parse.txt")]
        ) == 0
        capsys.readouterr()
        assert main(
            ["convert", "--mode", "parse2top", "--parse", str(tmp_path / "parse.txt"),
             "--vocab", str(tmp_path / "vocab.txt"),
             "--tokens", " ".join(examples[3].tokens)]
        ) == 0
        out = capsys.readouterr().out.strip()
        from topdec import serialize_top

        assert out == serialize_top(examples[3].tree)

    def test_usage_error_exit_code(self, capsys):
        with pytest.raises(SystemExit) as err:
            main(["train"])  # missing required flags
        assert err.value.code == 1
