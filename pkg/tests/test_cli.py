"""Tests for the CLI module."""

import json

import pytest
from click.testing import CliRunner

from fre_seg.cli import main
from fre_seg.exporters.csv_export import read_rows
from fre_seg.exporters.json_export import read_json

# Four levels on 16px images; base width 11 gives a 176-channel bottleneck so B=162 fits
TINY = [
    "--set", "model.base_width=11",
    "--set", "model.depth=4",
    "--set", "data.synthetic.image_size=16",
    "--set", "data.synthetic.cells=[1, 2]",
    "--set", "data.synthetic.radius=[0.18, 0.25]",
    "--set", "data.synthetic.membrane_width=1",
    "--set", "data.n=8",
    "--set", "train.epochs=2",
    "--set", "train.batch_size=2",
    "--set", "seed=4",
]


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture(scope="class")
def fre_run(tmp_path_factory):
    """A finished two-epoch FRE training run."""
    out = tmp_path_factory.mktemp("runs") / "fre"
    result = CliRunner().invoke(main, ["train", *TINY, "--set", "model.variant=fre", "-o", str(out)])
    assert result.exit_code == 0, result.output
    return out, result


class TestCLI:
    """Tests for CLI functionality."""

    def test_help_option(self, runner):
        result = runner.invoke(main, ["--help"])
        assert result.exit_code == 0
        assert "Feature Random Enhancement" in result.output

    def test_generate(self, runner, tmp_path):
        result = runner.invoke(main, ["generate", *TINY, "-o", str(tmp_path / "data")])
        assert result.exit_code == 0, result.output
        assert len(list((tmp_path / "data" / "images").glob("*.png"))) == 8
        assert (tmp_path / "data" / "split.manifest").exists()

    def test_invalid_config_writes_nothing(self, runner, tmp_path):
        out = tmp_path / "run"
        result = runner.invoke(main, ["train", *TINY, "--set", "model.variant=fre", "--set", "fre.B=600",
                                      "-o", str(out)])
        assert result.exit_code != 0
        assert "fre.B" in result.output
        assert not out.exists()

    def test_bad_override(self, runner, tmp_path):
        result = runner.invoke(main, ["train", "--set", "train.epochs", "-o", str(tmp_path / "run")])
        assert result.exit_code != 0

    def test_dropout_auto(self, runner, tmp_path):
        out = tmp_path / "dropout"
        result = runner.invoke(main, ["train", *TINY, "--set", "model.variant=dropout",
                                      "--set", 'dropout_rate="auto"', "--set", "train.epochs=1", "-o", str(out)])
        assert result.exit_code == 0, result.output
        assert read_json(out / "summary.json")["dropout_rate"] == pytest.approx(162 / 176)

    def test_report_missing_run(self, runner, tmp_path):
        result = runner.invoke(main, ["report", str(tmp_path / "nowhere"), "-o", str(tmp_path / "report")])
        assert result.exit_code != 0
        assert "missing report inputs" in result.output


class TestTrainCommand:
    """Tests for a finished training run."""

    def test_artifacts(self, fre_run):
        out, _ = fre_run
        for name in ("config.json", "summary.json", "metrics.csv", "activation_stats.csv", "best.npz", "last.npz"):
            assert (out / name).exists(), name

    def test_summary_echoes_fre(self, fre_run):
        out, result = fre_run
        summary = read_json(out / "summary.json")
        assert summary["variant"] == "fre"
        assert (summary["fre"]["B"], summary["fre"]["X"]) == (162, 632.0)
        assert "B=162, X=632" in result.output

    def test_metrics_rows(self, fre_run):
        out, _ = fre_run
        rows = read_rows(out / "metrics.csv")
        assert [(r["epoch"], r["split"]) for r in rows] == [("1", "train"), ("1", "val"), ("2", "train"), ("2", "val")]

    def test_config_echo_reloads(self, fre_run, runner, tmp_path):
        out, _ = fre_run
        config = json.loads((out / "config.json").read_text())
        assert config["fre"]["B"] == 162
        result = runner.invoke(main, ["train", "-c", str(out / "config.json"), "--set", "train.epochs=1",
                                      "-o", str(tmp_path / "again")])
        assert result.exit_code == 0, result.output

    def test_eval_reproduces_best_val(self, fre_run, runner):
        out, _ = fre_run
        result = runner.invoke(main, ["eval", "-k", str(out / "best.npz"), "-c", str(out / "config.json"),
                                      "--split", "val", "-b", "2"])
        assert result.exit_code == 0, result.output
        evaluated = read_json(out / "eval_val.json")["metrics"]["mean_iou"]
        assert evaluated == read_json(out / "summary.json")["best_val_miou"]
        assert (out / "eval_val.csv").exists()

    def test_report(self, fre_run, runner, tmp_path):
        out, _ = fre_run
        report = tmp_path / "report"
        result = runner.invoke(main, ["report", str(out), "-o", str(report)])
        assert result.exit_code == 0, result.output
        rows = (report / "comparison.csv").read_text().splitlines()
        assert rows[1].startswith("U-Net + SEblock + FRE,")


class TestSearchCommand:
    """Tests for the search command."""

    def test_search_and_resume(self, runner, tmp_path):
        out = tmp_path / "search"
        args = ["search", *TINY, "--set", "model.variant=fre", "--set", "search.epochs=1", "-o", str(out)]
        result = runner.invoke(main, args + ["-n", "2"])
        assert result.exit_code == 0, result.output
        assert len((out / "trials.jsonl").read_text().splitlines()) == 2

        result = runner.invoke(main, args + ["-n", "3"])
        assert result.exit_code == 0, result.output
        assert len((out / "trials.jsonl").read_text().splitlines()) == 3
        scatter = read_rows(out / "tpe_scatter.csv")
        assert len(scatter) == 3
        assert list(scatter[0]) == ["run", "trial", "B", "X", "miou"]
        assert {row["run"] for row in scatter} == {"search"}
        best = read_json(out / "best_config.json")
        assert 1 <= best["fre"]["B"] <= 176

    def test_target_variant_mismatch(self, runner, tmp_path):
        result = runner.invoke(main, ["search", *TINY, "--set", "search.target=fre", "-o", str(tmp_path / "s")])
        assert result.exit_code != 0
        assert "model.variant=fre" in result.output
