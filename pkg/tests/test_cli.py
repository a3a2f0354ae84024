import filecmp

import pandas as pd
import pytest

import skyaug
from skyaug.cli import cmdline_main
from skyaug.pipeline import run_pipeline
from skyaug.utils.config import PipelineConfig, parse_config_text
from skyaug.utils.stages import (AUGMENTED_MANIFEST, COMPARISON, DATA_MANIFEST, FILTER_REPORT, REPORT_INDEX,
                                 STAGE_ORDER, SUMMARY, SWEEP_REPORT)

TINY_RUN = dict(synthetic_count=30, side=8, epochs=2, latent_dim=8, candidate_count=4, sweep_max=3,
                render_svg=False)


def test_version(capsys):
    assert cmdline_main(["--version"]) == 0
    assert capsys.readouterr().out.strip() == skyaug.__version__


def test_no_command_prints_help(capsys):
    assert cmdline_main([]) == 0
    assert "commands" in capsys.readouterr().out


def test_config_prints_resolved_values(capsys):
    assert cmdline_main(["config", "--epochs", "5", "--no-svg", "--filter-mode", "sequential"]) == 0
    config = parse_config_text(capsys.readouterr().out)
    assert config == PipelineConfig(epochs=5, render_svg=False, filter_mode="sequential")


@pytest.mark.parametrize(
    "argv",
    [
        ["prepare", "--no-such-flag"],
        ["tune_pls", "--r2-mode", "per_pixel"],
        ["frobnicate"],
    ],
)
def test_usage_errors_exit_with_1(argv):
    assert cmdline_main(argv) == 1


def test_bad_config_key_exits_with_1(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("epoch = 5\n")
    assert cmdline_main(["prepare", "--config", str(path), "--outdir", str(tmp_path / "out")]) == 1


def test_missing_dataset_exits_with_2(tmp_path):
    argv = ["prepare", "--dataset", str(tmp_path / "nowhere"), "--outdir", str(tmp_path / "out")]
    assert cmdline_main(argv) == 2


def test_stage_out_of_order_exits_with_3(tmp_path):
    assert cmdline_main(["tune_pls", "--outdir", str(tmp_path)]) == 3
    assert cmdline_main(["train-final", "--outdir", str(tmp_path)]) == 3


def test_prepare_writes_the_split_manifest(tmp_path):
    assert cmdline_main(["prepare", "--outdir", str(tmp_path)]) == 0
    manifest = pd.read_csv(tmp_path / DATA_MANIFEST)
    assert list(manifest.columns) == ["image_path", "map_path", "split"]
    assert manifest["split"].value_counts().to_dict() == {"train": 69, "test": 28, "val": 18}


def _tiny_config(outdir, **overrides):
    return PipelineConfig(outdir=str(outdir), **{**TINY_RUN, **overrides})


def test_stages_one_by_one(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(_tiny_config(tmp_path / "out", epochs=1, sweep_max=2).to_text())
    for stage in ["prepare", "train-gan", "sample-gan", "pseudolabel", "tune-pls", "filter", "train-final",
                  "evaluate", "report"]:
        assert cmdline_main([stage, "--config", str(path)]) == 0, stage
    assert (tmp_path / "out" / REPORT_INDEX).exists()
    assert run_pipeline(_tiny_config(tmp_path / "out", epochs=1, sweep_max=2)) == []


def test_pipeline_runs_every_stage_then_nothing(tmp_path):
    config = _tiny_config(tmp_path)
    assert run_pipeline(config) == STAGE_ORDER
    assert run_pipeline(config) == []
    assert run_pipeline(config.replace(threshold_criterion="corner"))[0] == "evaluate"

    comparison = pd.read_csv(tmp_path / COMPARISON)
    assert list(comparison["case"]) == ["without_augmentation", "after_augmentation"]
    for column in ("precision", "recall", "f_score"):
        assert comparison[column].between(0, 1).all()

    decisions = pd.read_csv(tmp_path / FILTER_REPORT)
    augmented = pd.read_csv(tmp_path / AUGMENTED_MANIFEST)
    train_count = (pd.read_csv(tmp_path / DATA_MANIFEST)["split"] == "train").sum()
    assert len(decisions) == 4
    assert len(augmented) == train_count + ((decisions["verdict"] == "favorable") & ~decisions["duplicate"]).sum()

    sweep = pd.read_csv(tmp_path / SWEEP_REPORT)
    assert list(sweep["n_comp"]) == [1, 2, 3]
    assert "optimistic" in (tmp_path / SUMMARY).read_text()

    index = pd.read_csv(tmp_path / REPORT_INDEX)
    assert {"sweep.csv", "filter_decisions.csv", "comparison.csv"} <= set(index["artifact"])
    assert set(index["kind"]) == {"csv"}


def test_pipeline_is_reproducible(tmp_path):
    run_pipeline(_tiny_config(tmp_path / "a"))
    run_pipeline(_tiny_config(tmp_path / "b"))
    csvs = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*.csv"))
    assert csvs
    match, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", [str(p) for p in csvs],
                                               shallow=False)
    assert mismatch == [] and errors == []

    # a deleted artifact is rebuilt by its own stage, byte for byte
    (tmp_path / "a" / FILTER_REPORT).unlink()
    assert run_pipeline(_tiny_config(tmp_path / "a")) == ["filter"]
    assert filecmp.cmp(tmp_path / "a" / FILTER_REPORT, tmp_path / "b" / FILTER_REPORT, shallow=False)


@pytest.mark.slow
def test_end_to_end_on_the_reference_sized_dataset(tmp_path):
    config = PipelineConfig(outdir=str(tmp_path), epochs=50, candidate_count=32)
    assert cmdline_main(["run", "--outdir", str(tmp_path), "--epochs", "50", "--candidate-count", "32"]) == 0
    assert run_pipeline(config) == []

    comparison = pd.read_csv(tmp_path / COMPARISON)
    assert list(comparison.columns) == ["case", "r2_train", "r2_test", "precision", "recall", "f_score"]
    index = pd.read_csv(tmp_path / REPORT_INDEX)
    assert "sweep.svg" in set(index["artifact"])
    assert (tmp_path / "report" / "sweep.svg").exists()
