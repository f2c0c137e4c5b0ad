#!/usr/bin/env python3
"""
Pruebas de la línea de comandos: salidas, ficheros y códigos de salida
"""
import json

import pytest

from cli import main
from core.mtree_assistant import MTreeAssistant


def math23k(id_, equation, ans):
    text = "there are 13 boxes of 10 apples and 13 boxes of 3 pears , 40 are sold"
    return {"id": id_, "original_text": text, "equation": equation, "ans": ans}


@pytest.fixture
def gold_file(tmp_path):
    path = tmp_path / "gold.json"
    path.write_text(json.dumps([math23k("1", "x=13*10+13*3-40", "129"), math23k("2", "x=13*10", "131")]), encoding="utf-8")
    return path


@pytest.fixture
def predictions_file(tmp_path):
    path = tmp_path / "pred.jsonl"
    lines = [{"id": "1", "prediction": "13*(10+3)-40"}, {"id": "2", "prediction": "13*10"}]
    path.write_text("\n".join(json.dumps(line) for line in lines) + "\n", encoding="utf-8")
    return path


class TestCanonicalize:
    def test_mtree_and_value(self, capsys):
        assert main(["canonicalize", "13*(10+3)-40"]) == 0
        assert capsys.readouterr().out.splitlines() == ["+(*(3,13),*(10,13),-40)", "value=129"]

    def test_refmtree(self, capsys):
        assert main(["canonicalize", "x=13*(10+3)-40", "--refmtree"]) == 0
        assert capsys.readouterr().out.splitlines()[0] == "+(*(3,13),*(10,13),*-(40))"

    def test_syntax_error_is_an_input_error(self, capsys):
        assert main(["canonicalize", "13*(10+3"]) == 2
        captured = capsys.readouterr()
        assert captured.out == ""
        assert "posición" in captured.err

    def test_division_by_zero(self):
        assert main(["canonicalize", "5/(2-2)"]) == 2


class TestCompare:
    def test_rewrite_equivalent(self, capsys):
        assert main(["compare", "13*(10+3)-40", "13*10+13*3-40"]) == 0
        assert capsys.readouterr().out.splitlines() == [
            "exp_acc=false", "val_acc=true", "mtree_acc=true", "mtree_iou=1",
        ]

    def test_wrong_sign(self, capsys):
        assert main(["compare", "13*(10+3)+40", "13*10+13*3-40"]) == 0
        assert "mtree_iou=2/3" in capsys.readouterr().out

    def test_broken_prediction_is_scored_not_fatal(self, capsys):
        assert main(["compare", "13*(10+3", "13*10+13*3-40"]) == 0
        assert "failure=parse_error" in capsys.readouterr().out

    def test_broken_gold(self):
        assert main(["compare", "1", "2+"]) == 2

    def test_negative_tolerance(self):
        assert main(["compare", "1", "1", "--tol", "-1"]) == 2


class TestEvaluate:
    def test_excluded_gold_sample_sets_the_exit_code(self, gold_file, predictions_file, tmp_path, capsys):
        out = tmp_path / "report.txt"
        code = main(["evaluate", str(gold_file), str(predictions_file), "--out", str(out)])
        assert code == 2
        assert "evaluation" in capsys.readouterr().out
        lines = out.read_text(encoding="utf-8").splitlines()
        assert "count=1" in lines
        assert "mtree_acc=1.000000" in lines
        exclusions = tmp_path / "report.exclusions.tsv"
        assert exclusions.read_text(encoding="utf-8") == "2\tanswer_mismatch\n"

    def test_clean_corpus(self, tmp_path, predictions_file, capsys):
        gold = tmp_path / "clean.json"
        gold.write_text(json.dumps([math23k("1", "x=13*10+13*3-40", "129")]), encoding="utf-8")
        assert main(["evaluate", str(gold), str(predictions_file), "--workers", "2"]) == 0
        assert "100.00%" in capsys.readouterr().out

    def test_missing_predictions_are_reported(self, tmp_path, capsys):
        gold = tmp_path / "clean.json"
        gold.write_text(json.dumps([math23k("1", "x=13*10+13*3-40", "129")]), encoding="utf-8")
        predictions = tmp_path / "empty.jsonl"
        predictions.write_text("", encoding="utf-8")
        assert main(["evaluate", str(gold), str(predictions)]) == 0
        assert "sin predicción: 1" in capsys.readouterr().out

    def test_mawps_answer_variable_on_the_right(self, tmp_path):
        gold = tmp_path / "mawps.json"
        record = {"iIndex": 1, "sQuestion": "3 apples and 5 pears", "lEquations": ["3+5=X"], "lSolutions": [8]}
        gold.write_text(json.dumps([record]), encoding="utf-8")
        predictions = tmp_path / "pred.jsonl"
        predictions.write_text(json.dumps({"id": "1", "prediction": "3+5"}) + "\n", encoding="utf-8")
        out = tmp_path / "report.txt"
        assert main(["evaluate", str(gold), str(predictions), "--dialect", "mawps", "--out", str(out)]) == 0
        lines = out.read_text(encoding="utf-8").splitlines()
        assert "exp_acc=1.000000" in lines
        assert "mtree_acc=1.000000" in lines

    def test_error_totals_belong_to_the_run(self, gold_file, tmp_path):
        predictions = tmp_path / "broken.jsonl"
        predictions.write_text(json.dumps({"id": "1", "prediction": "13*(10+3"}) + "\n", encoding="utf-8")
        assistant = MTreeAssistant()
        first = assistant.evaluate(gold_file, predictions).data["errors"]
        second = assistant.evaluate(gold_file, predictions).data["errors"]
        assert first == second
        assert first["by_category"] == {"schema_error": 1, "parse_error": 1}

    def test_missing_file(self, tmp_path, predictions_file):
        assert main(["evaluate", str(tmp_path / "nope.json"), str(predictions_file)]) == 2


class TestGenerateAndStats:
    def test_generate_then_stats(self, tmp_path, capsys):
        out = tmp_path / "synthetic.jsonl"
        assert main(["generate", "--count", "5", "--seed", "3", "--out", str(out)]) == 0
        assert len(out.read_text(encoding="utf-8").splitlines()) == 5
        capsys.readouterr()

        assert main(["stats", str(out), "--dialect", "synthetic"]) == 0
        assert "muestras: 5" in capsys.readouterr().out

    def test_generation_is_reproducible(self, tmp_path):
        first, second = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        main(["generate", "--count", "8", "--seed", "1", "--out", str(first)])
        main(["generate", "--count", "8", "--seed", "1", "--out", str(second)])
        assert first.read_text(encoding="utf-8") == second.read_text(encoding="utf-8")

    def test_bad_branch_distribution(self):
        assert main(["generate", "--branches", "two:1"]) == 2

    def test_stats_of_a_dataset_reports_exclusions(self, gold_file, capsys):
        assert main(["stats", str(gold_file)]) == 0
        assert "answer_mismatch=1" in capsys.readouterr().out


class TestToyDecoder:
    def test_train_and_evaluate(self, tmp_path, capsys):
        config = tmp_path / "toy.env"
        config.write_text(
            "\n".join([
                "SAMPLES=8", "EPOCHS=1", "D_K=8", "HEADS=2", "MAX_DEPTH=2",
                f"CHECKPOINT={tmp_path / 'toy.pt'}", f"METRICS_LOG={tmp_path / 'metrics.jsonl'}",
            ]) + "\n",
            encoding="utf-8",
        )
        report = tmp_path / "train.txt"
        assert main(["train-toy", str(config), "--no-cross-goal", "--out", str(report)]) == 0
        assert "vanilla/train" in capsys.readouterr().out
        assert (tmp_path / "toy.pt").is_file()
        assert "vanilla/train.count=7" in report.read_text(encoding="utf-8")

        assert main(["eval-toy", str(config), "--checkpoint", str(tmp_path / "toy.pt")]) == 0
        assert "vanilla/train" in capsys.readouterr().out

    def test_unknown_config_key(self, tmp_path):
        config = tmp_path / "toy.env"
        config.write_text("LEARNING_SPEED=1\n", encoding="utf-8")
        assert main(["train-toy", str(config)]) == 2

    def test_missing_checkpoint(self, tmp_path):
        assert main(["eval-toy", "--checkpoint", str(tmp_path / "none.pt")]) == 2

    def test_same_seed_same_metrics(self, tmp_path):
        config = tmp_path / "toy.env"
        config.write_text(
            "\n".join([
                "SAMPLES=8", "EPOCHS=2", "D_K=8", "HEADS=2", "MAX_DEPTH=2",
                f"CHECKPOINT={tmp_path / 'toy.pt'}", f"METRICS_LOG={tmp_path / 'metrics.jsonl'}",
            ])
            + "\n",
            encoding="utf-8",
        )
        first, second = tmp_path / "first.txt", tmp_path / "second.txt"
        assert main(["train-toy", str(config), "--seed", "7", "--out", str(first)]) == 0
        assert main(["train-toy", str(config), "--seed", "7", "--out", str(second)]) == 0
        assert first.read_text(encoding="utf-8") == second.read_text(encoding="utf-8")
