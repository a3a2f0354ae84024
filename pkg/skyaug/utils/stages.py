"""
Stage bookkeeping: artifact locations, stage-order checks and hash-based reuse.

A stage is skipped when its recorded input hashes, config values and output
hashes all match the current state of the output directory (unless forced).
"""
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Tuple

from threadpoolctl import threadpool_limits

from skyaug.metadata.classes.run_manifest import RunManifest
from skyaug.utils.config import PipelineConfig, load_config
from skyaug.utils.errors import StageOrderError
from skyaug.utils.file import ensure_directory, sha256_file

RUN_MANIFEST = "run_manifest.json"

DATA_MANIFEST = "data/manifest.csv"
GENERATOR_CHECKPOINT = "gan/checkpoint_G.bin"
DISCRIMINATOR_CHECKPOINT = "gan/checkpoint_D.bin"
LOSS_HISTORY = "gan/loss_history.csv"
SAMPLES_MANIFEST = "candidates/samples.csv"
CANDIDATES_MANIFEST = "candidates/manifest.csv"
SWEEP_REPORT = "pls/sweep.csv"
FILTER_REPORT = "filter/filter_report.csv"
AUGMENTED_MANIFEST = "filter/augmented_manifest.csv"
MODEL_WITHOUT_AUGMENTATION = "pls/model_without_augmentation.bin"
MODEL_AFTER_AUGMENTATION = "pls/model_after_augmentation.bin"
METRICS_WITHOUT_AUGMENTATION = "evaluate/metrics_without_augmentation.csv"
METRICS_AFTER_AUGMENTATION = "evaluate/metrics_after_augmentation.csv"
COMPARISON = "evaluate/comparison.csv"
SUMMARY = "evaluate/summary.txt"
REPORT_INDEX = "report/index.csv"

CASES = ["without_augmentation", "after_augmentation"]


@dataclass(frozen=True)
class StageSpec:
    inputs: Tuple[str, ...]
    outputs: Tuple[str, ...]
    config_keys: Tuple[str, ...]


STAGES = {
    "prepare": StageSpec(
        inputs=(),
        outputs=(DATA_MANIFEST,),
        config_keys=("dataset", "synthetic_count", "synthetic_seed", "side", "split_seed", "manifest"),
    ),
    "train_gan": StageSpec(
        inputs=(DATA_MANIFEST,),
        outputs=(GENERATOR_CHECKPOINT, DISCRIMINATOR_CHECKPOINT, LOSS_HISTORY),
        config_keys=("batch_size", "epochs", "latent_dim", "learning_rate", "beta1", "beta2",
                     "gan_seed", "dedupe_augment"),
    ),
    "sample_gan": StageSpec(
        inputs=(GENERATOR_CHECKPOINT,),
        outputs=(SAMPLES_MANIFEST,),
        config_keys=("candidate_count", "candidate_seed", "latent_dim", "side"),
    ),
    "pseudolabel": StageSpec(
        inputs=(SAMPLES_MANIFEST,),
        outputs=(CANDIDATES_MANIFEST,),
        config_keys=("cluster_max_iters", "cluster_tol", "invert_cloud_rule", "window_radius", "max_passes"),
    ),
    "tune_pls": StageSpec(
        inputs=(DATA_MANIFEST,),
        outputs=(SWEEP_REPORT,),
        config_keys=("sweep_max", "r2_mode"),
    ),
    "filter": StageSpec(
        inputs=(DATA_MANIFEST, SWEEP_REPORT, CANDIDATES_MANIFEST),
        outputs=(FILTER_REPORT, AUGMENTED_MANIFEST),
        config_keys=("filter_mode", "r2_mode"),
    ),
    "train_final": StageSpec(
        inputs=(DATA_MANIFEST, SWEEP_REPORT, AUGMENTED_MANIFEST),
        outputs=(MODEL_WITHOUT_AUGMENTATION, MODEL_AFTER_AUGMENTATION),
        config_keys=(),
    ),
    "evaluate": StageSpec(
        inputs=(DATA_MANIFEST, AUGMENTED_MANIFEST, MODEL_WITHOUT_AUGMENTATION, MODEL_AFTER_AUGMENTATION),
        outputs=(METRICS_WITHOUT_AUGMENTATION, METRICS_AFTER_AUGMENTATION, COMPARISON, SUMMARY),
        config_keys=("threshold_criterion", "r2_mode"),
    ),
    "report": StageSpec(
        inputs=(SWEEP_REPORT, FILTER_REPORT, COMPARISON),
        outputs=(REPORT_INDEX,),
        config_keys=("render_svg",),
    ),
}

STAGE_ORDER = list(STAGES)

# which stage writes each artifact, for stage-order error messages
_PRODUCERS = {artifact: name for name, spec in STAGES.items() for artifact in spec.outputs}


def config_from_args(args) -> PipelineConfig:
    """Resolve the PipelineConfig from `--config` plus command-line overrides."""
    overrides = {}
    for key, value in vars(args).items():
        if key in ("config", "func", "subcommand", "force"):
            continue
        overrides[key] = value
    return load_config(getattr(args, "config", ""), **overrides)


def _hashes(outdir: Path, paths) -> dict:
    return {p: sha256_file(outdir / p) if (outdir / p).exists() else None for p in paths}


def run_stage(config: PipelineConfig, name: str, func: Callable[[PipelineConfig, Path], None],
              force: bool = False) -> bool:
    """
    Run one stage unless its outputs are up to date.

    Args:
        config (PipelineConfig): Resolved pipeline configuration.
        name (str): Stage name (a key of STAGES).
        func (callable): func(config, outdir) producing the stage outputs.
        force (bool): Re-run even if the stage is up to date.

    Returns:
        bool: True if the stage ran, False if it was skipped.

    Raises:
        StageOrderError: If an input artifact of the stage is missing.
    """
    spec = STAGES[name]
    outdir = ensure_directory(config.outdir)

    for artifact in spec.inputs:
        if not (outdir / artifact).exists():
            raise StageOrderError(
                f"Stage '{name}' needs the artifact '{outdir / artifact}', "
                f"which is produced by stage '{_PRODUCERS[artifact]}'. Run it first."
            )

    manifest_path = outdir / RUN_MANIFEST
    manifest = RunManifest.load_or_create(manifest_path, config.to_dict())
    input_hashes = _hashes(outdir, spec.inputs)
    config_values = {k: getattr(config, k) for k in spec.config_keys}

    if not force and manifest.is_fresh(name, input_hashes, config_values, _hashes(outdir, spec.outputs)):
        logging.info(f"Stage {name} is up to date; skipping (use --force to re-run)")
        return False

    logging.info(f"Running stage {name}")
    _start = time.perf_counter()
    with threadpool_limits(limits=max(config.num_workers, 1)):
        func(config, outdir)
    wall_time = time.perf_counter() - _start

    output_hashes = _hashes(outdir, spec.outputs)
    missing = [p for p, h in output_hashes.items() if h is None]
    if missing:
        raise RuntimeError(f"Stage '{name}' finished without writing {missing}")

    manifest.record_stage(name, input_hashes, config_values, output_hashes, wall_time)
    manifest.save_json(manifest_path)
    logging.info(f"Stage {name} finished in {wall_time:.1f} s")
    return True
