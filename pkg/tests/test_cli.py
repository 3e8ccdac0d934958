import json

import numpy as np
import pytest
from click.testing import CliRunner

from eloqnet import fileio
from eloqnet.cli import (
    bilateral,
    compare,
    crossval,
    info,
    main,
    predict,
    simulate,
    train_command,
)
from eloqnet.connectivity import WindowConfig
from eloqnet.model import ModelConfig, build_variant
from eloqnet.settings import MANIFEST_NAME, load_manifest


def assert_error_record(result, exit_code: int):
    """Helper function to verify the exit code and the JSON error record."""
    assert result.exit_code == exit_code, result.output
    assert f'"exit_code": {exit_code}' in result.output


def write_config(tmp_path, text, name="run.ini"):
    """Helper function to write a configuration variant to disk."""
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


def run_train(cohort_dir, config, out):
    """Helper function to train on a cohort and return the result."""
    runner = CliRunner()
    return runner.invoke(
        train_command, [str(cohort_dir), "-c", str(config), "-o", str(out)]
    )


class TestSimulate:
    """Test suite for the simulate command."""

    def test_simulate_writes_cohort(self, tmp_path, tiny_config_file):
        """Test that simulate writes every patient, the index and a manifest."""
        out = tmp_path / "cohort"
        runner = CliRunner()
        result = runner.invoke(simulate, ["-c", str(tiny_config_file), "-o", str(out)])
        assert result.exit_code == 0, result.output
        assert sorted(p.name for p in out.glob("*.eloq")) == [
            "p000.eloq",
            "p001.eloq",
            "p002.eloq",
            "p003.eloq",
        ]
        assert (out / fileio.COHORT_INDEX).is_file()
        manifest, run = load_manifest(out / MANIFEST_NAME)
        assert manifest["command"] == "simulate"
        assert run.synth.patients == 4

    def test_simulate_is_reproducible(self, tmp_path, tiny_config_file):
        """Test that two runs with the same seed write identical patients."""
        runner = CliRunner()
        for name in ("a", "b"):
            result = runner.invoke(
                simulate, ["-c", str(tiny_config_file), "-o", str(tmp_path / name)]
            )
            assert result.exit_code == 0, result.output
        for path in (tmp_path / "a").glob("*.eloq"):
            assert path.read_bytes() == (tmp_path / "b" / path.name).read_bytes()

    def test_simulate_seed_override(self, tmp_path, tiny_config_file):
        """Test that --seed changes the generated data."""
        runner = CliRunner()
        for name, seed in (("a", "1"), ("b", "2")):
            result = runner.invoke(
                simulate,
                [
                    "-c",
                    str(tiny_config_file),
                    "--seed",
                    seed,
                    "-o",
                    str(tmp_path / name),
                ],
            )
            assert result.exit_code == 0, result.output
        a = (tmp_path / "a" / "p000.eloq").read_bytes()
        assert a != (tmp_path / "b" / "p000.eloq").read_bytes()

    def test_simulate_invalid_config(self, tmp_path, tiny_config_text):
        """Test that an invalid configuration exits with code 2."""
        config = write_config(
            tmp_path, tiny_config_text.replace("patients = 4", "patients = 0")
        )
        runner = CliRunner()
        result = runner.invoke(simulate, ["-c", config, "-o", str(tmp_path / "out")])
        assert_error_record(result, 2)

    def test_simulate_missing_config(self, tmp_path):
        """Test that a missing configuration file exits with code 2."""
        runner = CliRunner()
        result = runner.invoke(
            simulate, ["-c", str(tmp_path / "nope.ini"), "-o", str(tmp_path / "out")]
        )
        assert_error_record(result, 2)


class TestTrainAndPredict:
    """Test suite for the train and predict commands."""

    def test_train_writes_checkpoint(self, tmp_path, cohort_dir, tiny_config_file):
        """Test that train writes a checkpoint and one loss per epoch."""
        out = tmp_path / "model"
        result = run_train(cohort_dir, tiny_config_file, out)
        assert result.exit_code == 0, result.output
        assert (out / fileio.CHECKPOINT_NAME).is_file()
        history = (out / "loss_history.tsv").read_text().splitlines()
        assert history[0] == "epoch\tloss"
        assert len(history) == 3
        state, window = fileio.read_checkpoint(out / fileio.CHECKPOINT_NAME)
        assert state.config.regions == 16
        assert window == WindowConfig(window_length=20, stride=10)

    def test_predict(self, tmp_path, cohort_dir, tiny_config_file):
        """Test that predict labels every region with the trained network."""
        model_dir = tmp_path / "model"
        assert run_train(cohort_dir, tiny_config_file, model_dir).exit_code == 0

        out = tmp_path / "predict"
        runner = CliRunner()
        result = runner.invoke(
            predict,
            [
                str(model_dir / fileio.CHECKPOINT_NAME),
                str(cohort_dir / "p000.eloq"),
                "-o",
                str(out),
            ],
        )
        assert result.exit_code == 0, result.output
        assert "language" in result.output
        (record,) = fileio.read_jsonl(out / "predictions.jsonl")
        assert record["patient_id"] == "p000"
        attention = (out / "attention.tsv").read_text().splitlines()
        # 60 frames, window 20, stride 10
        assert len(attention) == 1 + 5

        manifest, run = load_manifest(out / MANIFEST_NAME)
        assert manifest["command"] == "predict"
        assert "seed" not in manifest
        assert "[train]" not in (out / MANIFEST_NAME).read_text()
        assert run.window == WindowConfig(window_length=20, stride=10)

    def test_predict_region_mismatch(self, tmp_path, cohort_dir):
        """Test that a checkpoint for another region count exits with code 2."""
        cfg = ModelConfig(regions=8, filters=2, fc_dims=(4, 3), lstm_hidden=3)
        state = build_variant(cfg, np.random.default_rng(0))
        ckpt = fileio.write_checkpoint(tmp_path / "m.ckpt", state, WindowConfig())
        runner = CliRunner()
        result = runner.invoke(
            predict,
            [str(ckpt), str(cohort_dir / "p000.eloq"), "-o", str(tmp_path / "out")],
        )
        assert_error_record(result, 2)

    def test_train_missing_cohort(self, tmp_path, tiny_config_file):
        """Test that a directory without a cohort index exits with code 2."""
        result = run_train(tmp_path, tiny_config_file, tmp_path / "model")
        assert_error_record(result, 2)


class TestCrossval:
    """Test suite for the crossval command."""

    def test_crossval_writes_metrics(self, tmp_path, cohort_dir, tiny_config_file):
        """Test that crossval writes fold and summary records."""
        out = tmp_path / "cv"
        runner = CliRunner()
        result = runner.invoke(
            crossval, [str(cohort_dir), "-c", str(tiny_config_file), "-o", str(out)]
        )
        assert result.exit_code == 0, result.output
        records = fileio.read_jsonl(out / "metrics.jsonl")
        summary = [r for r in records if r["record"] == "summary"]
        assert [r["task"] for r in summary] == ["language", "finger", "foot", "tongue"]
        assert {r["fold"] for r in records if r["record"] == "fold"} == {0, 1}
        patients = fileio.read_jsonl(out / "patients.jsonl")
        assert sorted(p["patient_id"] for p in patients) == [
            "p000",
            "p001",
            "p002",
            "p003",
        ]
        assert len(list((out / "attention").glob("*.tsv"))) == 4
        assert (out / "attention_alignment.jsonl").is_file()

    def test_crossval_is_deterministic(self, tmp_path, cohort_dir, tiny_config_file):
        """Test that the same seed gives byte-identical metrics."""
        runner = CliRunner()
        for name in ("a", "b"):
            result = runner.invoke(
                crossval,
                [
                    str(cohort_dir),
                    "-c",
                    str(tiny_config_file),
                    "-o",
                    str(tmp_path / name),
                ],
            )
            assert result.exit_code == 0, result.output
        a = (tmp_path / "a" / "metrics.jsonl").read_bytes()
        assert a == (tmp_path / "b" / "metrics.jsonl").read_bytes()

    def test_crossval_static_variant(self, tmp_path, cohort_dir, tiny_config_file):
        """Test that the static variant attends to a single window."""
        out = tmp_path / "cv"
        runner = CliRunner()
        result = runner.invoke(
            crossval,
            [
                str(cohort_dir),
                "-c",
                str(tiny_config_file),
                "--variant",
                "mt-gnn-static",
                "-o",
                str(out),
            ],
        )
        assert result.exit_code == 0, result.output
        rows = (out / "attention" / "p000.tsv").read_text().splitlines()
        assert rows == ["window\tlanguage\tmotor", "0\t1.0\t1.0"]
        assert not (out / "attention_alignment.jsonl").exists()

    def test_crossval_too_many_folds(self, tmp_path, cohort_dir, tiny_config_file):
        """Test that more folds than patients exits with code 2."""
        runner = CliRunner()
        result = runner.invoke(
            crossval,
            [
                str(cohort_dir),
                "-c",
                str(tiny_config_file),
                "--folds",
                "5",
                "-o",
                str(tmp_path / "cv"),
            ],
        )
        assert_error_record(result, 2)
        record = json.loads(
            next(line for line in result.output.splitlines() if line.startswith("{"))
        )
        assert record["error"] == "config"


class TestBilateral:
    """Test suite for the bilateral command."""

    def test_bilateral(self, tmp_path, cohort_dir, tiny_config_file):
        """Test that the bilateral patient is reported."""
        out = tmp_path / "bi"
        runner = CliRunner()
        result = runner.invoke(
            bilateral, [str(cohort_dir), "-c", str(tiny_config_file), "-o", str(out)]
        )
        assert result.exit_code == 0, result.output
        records = fileio.read_jsonl(out / "bilateral.jsonl")
        assert [r["record"] for r in records] == ["patient", "summary"]
        assert records[-1]["patients"] == 1
        assert isinstance(records[0]["right_hemisphere_detected"], bool)

    def test_no_bilateral_patients(self, tmp_path, tiny_config_text):
        """Test that a cohort without bilateral patients exits with code 2."""
        config = write_config(
            tmp_path,
            tiny_config_text.replace(
                "bilateral_fraction = 0.25", "bilateral_fraction = 0.0"
            ),
        )
        cohort = tmp_path / "cohort"
        runner = CliRunner()
        assert runner.invoke(simulate, ["-c", config, "-o", str(cohort)]).exit_code == 0
        result = runner.invoke(
            bilateral, [str(cohort), "-c", config, "-o", str(tmp_path / "bi")]
        )
        assert_error_record(result, 2)


class TestCompare:
    """Test suite for the compare command."""

    def test_compare_single_seed(self, tmp_path, cohort_dir, tiny_config_file):
        """Test that compare reports one summary per requested variant."""
        out = tmp_path / "cmp"
        runner = CliRunner()
        result = runner.invoke(
            compare,
            [
                str(cohort_dir),
                "-c",
                str(tiny_config_file),
                "--seeds",
                "1",
                "--variant",
                "proposed",
                "--variant",
                "mt-ann",
                "-o",
                str(out),
            ],
        )
        assert result.exit_code == 0, result.output
        records = fileio.read_jsonl(out / "compare.jsonl")
        summaries = [r for r in records if r["record"] == "summary"]
        assert [r["variant"] for r in summaries] == ["proposed", "mt-ann"]
        assert len([r for r in records if r["record"] == "run"]) == 2


class TestInfo:
    """Test suite for the info command and the group options."""

    def test_info_lists_variants(self):
        """Test that info prints a parameter table per variant."""
        runner = CliRunner()
        result = runner.invoke(info, ["--regions", "16"])
        assert result.exit_code == 0, result.output
        for variant in ("proposed", "mt-ann", "mt-gnn-static"):
            assert variant in result.output
        assert "total" in result.output

    def test_info_single_variant(self, tiny_config_file):
        """Test that --variant limits the output to one network."""
        runner = CliRunner()
        result = runner.invoke(
            info, ["-c", str(tiny_config_file), "--variant", "mt-ann"]
        )
        assert result.exit_code == 0, result.output
        assert "mt-ann (N=16)" in result.output
        assert "proposed" not in result.output

    @pytest.mark.parametrize("level", ["DEBUG", "info", "WARNING"])
    def test_log_level_option(self, level):
        """Test that the group accepts every log level."""
        runner = CliRunner()
        result = runner.invoke(main, ["--log-level", level, "info", "--regions", "8"])
        assert result.exit_code == 0, result.output

    def test_log_level_from_environment(self):
        """Test that the log level can come from the environment."""
        runner = CliRunner()
        result = runner.invoke(
            main, ["info", "--regions", "8"], env={"ELOQNET_LOG_LEVEL": "ERROR"}
        )
        assert result.exit_code == 0, result.output

    def test_invalid_log_level(self):
        """Test that an unknown log level is a usage error."""
        runner = CliRunner()
        result = runner.invoke(main, ["--log-level", "LOUD", "info"])
        assert result.exit_code == 2
