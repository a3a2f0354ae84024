"""
End-to-end orchestration: every stage in order, each skipped when up to date.
"""
import logging

from skyaug.utils.config import PipelineConfig
from skyaug.utils.stages import STAGE_ORDER, config_from_args, run_stage


def stage_functions() -> dict:
    from skyaug.evaluation.evalmetrics import evaluate_stage
    from skyaug.gan.gan_model import sample_gan_stage, train_gan_stage
    from skyaug.metadata.report import report
    from skyaug.preprocessing.imageio import prepare
    from skyaug.segmentation.filtering import filter_stage
    from skyaug.segmentation.pls import train_final_stage, tune_pls_stage
    from skyaug.segmentation.pseudolabel import pseudolabel_stage

    return {
        "prepare": prepare,
        "train_gan": train_gan_stage,
        "sample_gan": sample_gan_stage,
        "pseudolabel": pseudolabel_stage,
        "tune_pls": tune_pls_stage,
        "filter": filter_stage,
        "train_final": train_final_stage,
        "evaluate": evaluate_stage,
        "report": report,
    }


def run_pipeline(config: PipelineConfig, force: bool = False) -> list:
    """
    Run all stages serially.

    Returns:
        list: Names of the stages that actually ran.
    """
    functions = stage_functions()
    ran = []
    for name in STAGE_ORDER:
        if run_stage(config, name, functions[name], force=force):
            ran.append(name)
    logging.info(f"Pipeline finished; ran {ran or 'nothing'} (outputs in {config.outdir})")
    return ran


def _run_pipeline(args):
    import os

    config = config_from_args(args)
    if config.dataset != "synthetic" and not os.path.isdir(config.dataset):
        raise FileNotFoundError(f"The dataset directory '{config.dataset}' does not exist.")
    run_pipeline(config, force=args.force)


def _run_config(args):
    print(config_from_args(args).to_text(), end="")
