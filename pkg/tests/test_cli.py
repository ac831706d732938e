"""Tests for the command-line interface."""

import json
import os
from pathlib import Path

import pytest

from veraz.cli import EXIT_INVARIANT, EXIT_OK, EXIT_USAGE, main, prepare, render_table
from veraz.config import RunConfig
from veraz.selftrain import RoundReport, verify_run_log

from tests.conftest import make_rows, write_jsonl


BUNDLED_CORPUS = Path(__file__).resolve().parent.parent / "data" / "synthetic_fnn.jsonl"


def _selftrain(corpus_path, run_dir, tiny_flags, *extra):
    return main([
        "selftrain", "--data", str(corpus_path), "--run-dir", str(run_dir),
        *tiny_flags, *extra,
    ])


def test_ingest_prints_summary(corpus_path, tmp_path, capsys):
    """Test counts are printed and a normalized copy is written."""
    output = tmp_path / "out" / "normalized.jsonl"
    code = main(["ingest", "--data", str(corpus_path), "--output", str(output)])
    assert code == EXIT_OK

    summary = json.loads(capsys.readouterr().out)
    assert summary == {"total": 66, "labeled": 60, "unlabeled": 6, "fake": 30, "real": 30}
    assert len(output.read_text(encoding="utf-8").splitlines()) == 66

    saved = json.loads((output.parent / "config.json").read_text(encoding="utf-8"))
    assert saved["data_path"] == str(corpus_path)


def test_ingest_malformed_line(tmp_path, capsys):
    """Test a broken line exits 2 and names the line."""
    path = write_jsonl(make_rows(2, 2), tmp_path / "bad.jsonl")
    with open(path, 'a', encoding='utf-8') as f:
        f.write("{not json\n")

    assert main(["ingest", "--data", str(path), "--output-dir", str(tmp_path)]) == EXIT_USAGE
    assert "line 5" in capsys.readouterr().err


def test_ingest_empty_corpus(tmp_path, capsys):
    """Test a zero-record file exits 2."""
    path = tmp_path / "empty.jsonl"
    path.write_text("", encoding="utf-8")
    assert main(["ingest", "--data", str(path), "--output-dir", str(tmp_path)]) == EXIT_USAGE
    assert "empty corpus" in capsys.readouterr().err


def test_missing_data_path(tmp_path):
    """Test a corpus path that does not exist is a usage error."""
    missing = tmp_path / "nope.jsonl"
    assert main(["ingest", "--data", str(missing), "--output-dir", str(tmp_path)]) == EXIT_USAGE


def test_selftrain_writes_run_directory(corpus_path, tmp_path, tiny_flags, capsys):
    """Test a tiny run finishes and leaves every artifact."""
    run_dir = tmp_path / "run"
    assert _selftrain(corpus_path, run_dir, tiny_flags) == EXIT_OK

    for name in ("config.json", "fold_plan.json", "vocab.tsv", "stats.json", "rounds.jsonl",
                 "model.npz", "report.json", "report.txt"):
        assert (run_dir / name).exists(), name

    report = json.loads((run_dir / "report.json").read_text(encoding="utf-8"))
    assert [row["label"] for row in report] == ["Fold1-Val", "Fold+2-Test"]
    assert "Fold+2-Test" in capsys.readouterr().out
    assert verify_run_log(run_dir / "rounds.jsonl") >= 0


def test_selftrain_bad_sigma(corpus_path, tmp_path, tiny_flags):
    """Test sigma outside (0.5, 1) is a usage error."""
    code = _selftrain(corpus_path, tmp_path / "run", tiny_flags, "--sigma", "0.4")
    assert code == EXIT_USAGE


def test_selftrain_is_reproducible(corpus_path, tmp_path, tiny_flags):
    """Test two runs with one seed give byte-identical reports and logs."""
    assert _selftrain(corpus_path, tmp_path / "a", tiny_flags, "--seed", "7") == EXIT_OK
    assert _selftrain(corpus_path, tmp_path / "b", tiny_flags, "--seed", "7") == EXIT_OK

    for name in ("report.json", "report.txt", "rounds.jsonl", "fold_plan.json", "vocab.tsv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_selftrain_rejects_leaky_fold_plan(corpus_path, tmp_path, tiny_flags):
    """Test a fold plan holding a validation id aborts with exit 3."""
    prepared = prepare(RunConfig(data_path=str(corpus_path), min_frequency=1, max_seq_len=8))
    assert _selftrain(corpus_path, tmp_path / "first", tiny_flags) == EXIT_OK

    plan = json.loads((tmp_path / "first" / "fold_plan.json").read_text(encoding="utf-8"))
    plan["folds"][1].append(prepared.split.validation[0])
    bad_plan = tmp_path / "leaky_plan.json"
    bad_plan.write_text(json.dumps(plan), encoding="utf-8")

    code = _selftrain(corpus_path, tmp_path / "second", tiny_flags, "--fold-plan", str(bad_plan))
    assert code == EXIT_INVARIANT
    assert not (tmp_path / "second" / "report.json").exists()


def test_selftrain_rejects_plan_labeling_unlabeled_record(corpus_path, tmp_path, tiny_flags):
    """Test a plan listing an unlabeled record as labeled aborts with exit 3."""
    assert _selftrain(corpus_path, tmp_path / "first", tiny_flags) == EXIT_OK

    plan = json.loads((tmp_path / "first" / "fold_plan.json").read_text(encoding="utf-8"))
    unlabeled = "r0060"
    plan["folds"] = [[i for i in fold if i != unlabeled] for fold in plan["folds"]]
    plan["folds"][0].append(unlabeled)
    plan["labeled"].append(unlabeled)
    forged = tmp_path / "forged_plan.json"
    forged.write_text(json.dumps(plan), encoding="utf-8")

    code = _selftrain(corpus_path, tmp_path / "second", tiny_flags, "--fold-plan", str(forged))
    assert code == EXIT_INVARIANT
    assert not (tmp_path / "second" / "report.json").exists()


def test_config_file_with_flag_override(corpus_path, tmp_path, tiny_flags):
    """Test file values apply and flags win over them."""
    config_file = tmp_path / "run.json"
    config_file.write_text(json.dumps({"k": 5, "sigma": 0.9, "reject_policy": "defer"}),
                           encoding="utf-8")
    run_dir = tmp_path / "run"
    code = _selftrain(corpus_path, run_dir, tiny_flags, "--config", str(config_file))
    assert code == EXIT_OK

    saved = json.loads((run_dir / "config.json").read_text(encoding="utf-8"))
    assert saved["k"] == 2
    assert saved["sigma"] == 0.9
    assert saved["reject_policy"] == "defer"


def test_config_file_unknown_key(corpus_path, tmp_path, tiny_flags):
    """Test unknown config fields are rejected."""
    config_file = tmp_path / "run.json"
    config_file.write_text(json.dumps({"dropout": 0.5}), encoding="utf-8")
    code = _selftrain(corpus_path, tmp_path / "run", tiny_flags, "--config", str(config_file))
    assert code == EXIT_USAGE


@pytest.mark.parametrize("method", ["logreg", "nb"])
def test_baseline_command(method, corpus_path, tmp_path):
    """Test both baselines write a report with bounded metrics."""
    run_dir = tmp_path / method
    code = main([
        "baseline", method, "--data", str(corpus_path), "--run-dir", str(run_dir),
        "--min-frequency", "1", "--epochs", "20", "--alpha", "0.5",
    ])
    assert code == EXIT_OK

    report = json.loads((run_dir / "report.json").read_text(encoding="utf-8"))
    assert report["method"] == method
    for key in ("accuracy", "precision", "recall", "f1"):
        assert 0.0 <= report[key] <= 1.0
    if method == "nb":
        assert report["params"]["alpha"] == 0.5


def test_baseline_unknown_method(corpus_path):
    """Test argparse choices reject other methods with exit 2."""
    assert main(["baseline", "svm", "--data", str(corpus_path)]) == EXIT_USAGE


def test_evaluate_run_directory(corpus_path, tmp_path, tiny_flags):
    """Test the checkpoint re-scores test exactly like the last round."""
    run_dir = tmp_path / "run"
    assert _selftrain(corpus_path, run_dir, tiny_flags) == EXIT_OK
    assert main(["evaluate", "--run-dir", str(run_dir)]) == EXIT_OK

    result = json.loads((run_dir / "evaluate-test.json").read_text(encoding="utf-8"))
    last_round = json.loads((run_dir / "report.json").read_text(encoding="utf-8"))[-1]
    for key in ("accuracy", "precision", "recall", "f1"):
        assert result[key] == pytest.approx(last_round[key])

    assert main(["evaluate", "--run-dir", str(run_dir), "--split", "validation"]) == EXIT_OK
    assert (run_dir / "evaluate-validation.json").exists()


def test_evaluate_requires_run_directory(tmp_path):
    """Test a directory without artifacts is a usage error."""
    assert main(["evaluate", "--run-dir", str(tmp_path)]) == EXIT_USAGE


def test_render_table_layout():
    """Test one fixed-width row per round."""
    reports = [
        RoundReport("Fold1-Val", "validation", 0.5, 0.5, 0.5, 0.5, 10),
        RoundReport("Fold+2-Test", "test", 1.0, 1.0, 1.0, 1.0, 20, accepted=10),
    ]
    lines = render_table(reports).splitlines()
    assert lines[0].startswith("Round")
    assert lines[2].startswith("Fold1-Val")
    assert lines[3].split()[1:] == ["1.0000"] * 4 + ["20", "10", "0"]
    assert len({len(line) for line in lines}) == 1


def test_version_flag(capsys):
    """Test --version exits cleanly."""
    assert main(["--version"]) == EXIT_OK
    assert "veraz" in capsys.readouterr().out


slow = pytest.mark.skipif(not os.environ.get("VERAZ_SLOW_TESTS"),
                          reason="set VERAZ_SLOW_TESTS=1 for the full corpus run")


def _bundled_report(run_dir, *extra):
    code = main(["selftrain", "--data", str(BUNDLED_CORPUS), "--run-dir", str(run_dir), *extra])
    assert code == EXIT_OK
    return json.loads((run_dir / "report.json").read_text(encoding="utf-8"))


@pytest.fixture(scope="module")
def bundled_report(tmp_path_factory):
    return _bundled_report(tmp_path_factory.mktemp("bundled") / "run")


@slow
def test_bundled_corpus_end_to_end(bundled_report):
    """Test default settings on the bundled corpus reach F1 0.90 on test."""
    assert [row["label"] for row in bundled_report][-1] == "Fold+5-Test"
    assert len(bundled_report) == 5
    assert bundled_report[-1]["f1"] >= 0.90
    assert bundled_report[-1]["f1"] >= bundled_report[0]["f1"]


@slow
def test_bundled_corpus_attention_keeps_up_with_last_state(bundled_report, tmp_path):
    """Test attention pooling ends within 0.02 F1 of last-state pooling."""
    last_state = _bundled_report(tmp_path / "last", "--pooling", "last")
    assert bundled_report[-1]["f1"] >= last_state[-1]["f1"] - 0.02


@slow
@pytest.mark.parametrize("method", ["logreg", "nb"])
def test_bundled_corpus_baselines_trail_self_training(method, bundled_report, tmp_path):
    """Test supervised baselines reach 0.70 accuracy but stay below the self-trained F1."""
    run_dir = tmp_path / method
    code = main(["baseline", method, "--data", str(BUNDLED_CORPUS), "--run-dir", str(run_dir)])
    assert code == EXIT_OK

    report = json.loads((run_dir / "report.json").read_text(encoding="utf-8"))
    assert report["accuracy"] >= 0.70
    assert bundled_report[-1]["f1"] > report["f1"]
