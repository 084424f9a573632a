"""CLI subcommands end to end via the click test runner."""

from __future__ import annotations

import json

import pytest
from click.testing import CliRunner

from conftest import FIXTURES
from mmcoir.cli import main
from mmcoir.synthetic import planted_dataset, rows_to_jsonl


@pytest.fixture
def runner():
    return CliRunner()


def invoke(runner, *args):
    result = runner.invoke(main, [str(a) for a in args], catch_exceptions=False)
    return result


class TestIngest:
    def test_train_counts(self, runner, tmp_path):
        result = invoke(runner, "ingest", "--train", FIXTURES / "smoke_train.jsonl",
                        "--run-dir", tmp_path / "run")
        assert result.exit_code == 0
        stats = json.loads(result.output.splitlines()[-1])
        assert (stats["train"]["rows"], stats["train"]["accepted"],
                stats["train"]["rejected"]) == (50, 50, 0)
        assert stats["train"]["max_units"] >= stats["train"]["mean_units"] > 0

    def test_adversarial_strict_fails(self, runner, tmp_path):
        result = runner.invoke(main, ["ingest", "--train",
                                      str(FIXTURES / "adversarial_train.jsonl"),
                                      "--run-dir", str(tmp_path / "run")])
        assert result.exit_code == 1
        assert result.output.startswith("error:") or "error:" in result.output

    def test_adversarial_lenient_rejects_all(self, runner, tmp_path):
        result = invoke(runner, "ingest", "--train", FIXTURES / "adversarial_train.jsonl",
                        "--lenient", "--run-dir", tmp_path / "run")
        assert result.exit_code == 0
        stats = json.loads(result.output.splitlines()[-1])
        assert (stats["train"]["rows"], stats["train"]["accepted"],
                stats["train"]["rejected"]) == (20, 0, 20)


class TestEval:
    def test_smoke_eval_has_50_rows(self, runner, tmp_path):
        result = invoke(runner, "eval", "--file", FIXTURES / "smoke_eval.jsonl",
                        "--task", "qt→rc", "--dataset", "smoke",
                        "--data-root", FIXTURES, "--run-dir", tmp_path / "run")
        assert result.exit_code == 0
        csv = (tmp_path / "run" / "report.csv").read_text()
        row = csv.splitlines()[1].split(",")
        assert row[0] == "smoke"
        assert row[2] == "50"

    def test_manifest_suite(self, runner, tmp_path):
        result = invoke(runner, "eval", "--manifest", FIXTURES / "manifest.yaml",
                        "--data-root", FIXTURES, "--run-dir", tmp_path / "run")
        assert result.exit_code == 0
        lines = (tmp_path / "run" / "report.csv").read_text().splitlines()
        assert len(lines) == 4  # header + 2 tasks + macro average
        assert lines[-1].startswith("ALL,macro-avg")


class TestSearchCommand:
    def test_index_then_search(self, runner, tmp_path):
        run = tmp_path / "run"
        result = invoke(runner, "index", "--train", FIXTURES / "smoke_train.jsonl",
                        "--data-root", FIXTURES, "--tag", "smoke",
                        "--index-out", tmp_path / "smoke.idx", "--run-dir", run)
        assert result.exit_code == 0
        result = invoke(runner, "search", "--index", tmp_path / "smoke.idx",
                        "--text", "pie chart of market share", "-k", "5",
                        "--run-dir", tmp_path / "run2")
        assert result.exit_code == 0
        lines = [l for l in result.output.splitlines() if l and "\t" in l]
        assert len(lines) == 5


class TestAblate:
    def test_three_budget_rows(self, runner, tmp_path):
        result = invoke(runner, "ablate-len", "--file", FIXTURES / "smoke_eval.jsonl",
                        "--task", "qt→rc", "--dataset", "smoke",
                        "--data-root", FIXTURES, "--budgets", "128,256,512",
                        "--run-dir", tmp_path / "run")
        assert result.exit_code == 0
        lines = (tmp_path / "run" / "ablation.csv").read_text().splitlines()
        assert len(lines) == 4
        assert [l.split(",")[0] for l in lines[1:]] == ["128", "256", "512"]


class TestTrainCommand:
    def test_small_training_run(self, runner, tmp_path):
        data = planted_dataset(n_classes=24, seed=3, handle_len=30,
                               target_noise_tokens=40, target_noise_len=30)
        train_file = tmp_path / "train.jsonl"
        train_file.write_text(rows_to_jsonl(data.train_rows))
        run = tmp_path / "run"
        result = invoke(runner, "train", "--train", train_file, "--steps", "30",
                        "--dim", "64", "--batch-size", "8", "--run-dir", run)
        assert result.exit_code == 0
        assert (run / "head.query.head").exists()
        assert (run / "head.target.head").exists()
        curve = (run / "loss.csv").read_text().splitlines()
        assert curve[0] == "step,loss"
        assert len(curve) == 31


class TestRagCommand:
    def test_prompt_log(self, runner, tmp_path):
        run = tmp_path / "run"
        result = invoke(runner, "rag", "--file", FIXTURES / "smoke_eval.jsonl",
                        "--task", "qt→rc", "--dataset", "smoke",
                        "--corpus-train", FIXTURES / "smoke_train.jsonl",
                        "--data-root", FIXTURES, "-k", "2", "--run-dir", run)
        assert result.exit_code == 0
        lines = (run / "prompts.jsonl").read_text().splitlines()
        assert len(lines) == 50
        record = json.loads(lines[0])
        assert len(record["exemplar_ids"]) == 2
        assert "Reference implementation 1:" in record["prompt"]


class TestSmokeCommand:
    def test_end_to_end(self, runner, tmp_path):
        result = invoke(runner, "smoke", "--steps", "20", "--dim", "64",
                        "--run-dir", tmp_path / "run", "--out", tmp_path / "out")
        assert result.exit_code == 0
        report = tmp_path / "run" / "eval" / "report.csv"
        assert report.exists()
        assert len(report.read_text().splitlines()) == 4


class TestErrors:
    def test_missing_inputs_one_line_error(self, runner, tmp_path):
        result = runner.invoke(main, ["ingest", "--run-dir", str(tmp_path / "r")])
        assert result.exit_code == 1
        err_lines = [l for l in result.output.splitlines() if l.startswith("error:")]
        assert len(err_lines) == 1
        assert "ConfigError" in err_lines[0]
