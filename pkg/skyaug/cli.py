import argparse
import logging
import sys

from skyaug.utils.config import FILTER_MODES, R2_MODES, THRESHOLD_CRITERIA
from skyaug.utils.errors import SkyaugError, UsageError


def get_common_parser():
    parser = argparse.ArgumentParser(
        allow_abbrev=False,
        add_help=False,
    )
    parser.add_argument(
        "--config",
        type=str,
        default="",
        help="Path to a 'key = value' configuration file (see `skyaug config`)",
    )
    parser.add_argument(
        "--outdir",
        type=str,
        default=None,
        help="Output directory holding every stage artifact and the run manifest",
    )
    parser.add_argument(
        "--num-workers",
        type=int,
        default=None,
        help="Parallel workers (and BLAS threads) used inside a stage",
    )
    parser.add_argument(
        "--force",
        action="store_true",
        help="Re-run the stage even if its outputs are up to date",
    )
    return parser


PREPARE_HELP = "Load (or synthesize) the dataset, downsample it and write the train/val/test manifest"
def get_prepare_parser():
    parser = argparse.ArgumentParser(
        description=PREPARE_HELP,
        allow_abbrev=False,
        add_help=False,
        parents=[get_common_parser()],
    )
    parser.add_argument(
        "--dataset",
        type=str,
        default=None,
        help="'synthetic', or a SWINSEG-style directory with images/ and GTmaps/",
    )
    parser.add_argument(
        "--synthetic-count",
        type=int,
        default=None,
        help="Number of synthetic image/map pairs (default: 115)",
    )
    parser.add_argument(
        "--side",
        type=int,
        default=None,
        help="Working resolution in pixels; a multiple of 4 (default: 32)",
    )
    parser.add_argument(
        "--split-seed",
        type=int,
        default=None,
        help="Seed of the train/val/test shuffle",
    )
    parser.add_argument(
        "--manifest",
        type=str,
        default=None,
        help="Explicit (image_path, map_path, split) manifest overriding the seeded split",
    )
    return parser


def setup_prepare_parser(parent_parser):
    parser = parent_parser.add_parser(
        "prepare",
        help=PREPARE_HELP,
        parents=[get_prepare_parser()],
    )
    parser.set_defaults(func=cmd_run_prepare)

    return parser


def cmd_run_prepare(args):
    from skyaug.preprocessing.imageio import _run_prepare

    _run_prepare(args)


TRAIN_GAN_HELP = "Train the GAN on the 16-fold augmented training images"
def get_train_gan_parser():
    parser = argparse.ArgumentParser(
        description=TRAIN_GAN_HELP,
        allow_abbrev=False,
        add_help=False,
        parents=[get_common_parser()],
    )
    parser.add_argument(
        "--epochs",
        type=int,
        default=None,
        help="Training epochs (default: 1000)",
    )
    parser.add_argument(
        "--batch-size",
        type=int,
        default=None,
        help="Batch size (default: 32)",
    )
    parser.add_argument(
        "--gan-seed",
        type=int,
        default=None,
        help="Seed for weight initialization, batch order and training latents",
    )
    parser.add_argument(
        "--dedupe-augment",
        action="store_const",
        const=True,
        default=None,
        help="Train on the 8 distinct symmetries instead of all 16 transforms",
    )
    return parser


def setup_train_gan_parser(parent_parser):
    parser = parent_parser.add_parser(
        "train_gan",
        aliases=["train-gan"],
        help=TRAIN_GAN_HELP,
        parents=[get_train_gan_parser()],
    )
    parser.set_defaults(func=cmd_run_train_gan)

    return parser


def cmd_run_train_gan(args):
    from skyaug.gan.gan_model import _run_train_gan

    _run_train_gan(args)


SAMPLE_GAN_HELP = "Sample candidate images from the trained generator"
def get_sample_gan_parser():
    parser = argparse.ArgumentParser(
        description=SAMPLE_GAN_HELP,
        allow_abbrev=False,
        add_help=False,
        parents=[get_common_parser()],
    )
    parser.add_argument(
        "--candidate-count",
        type=int,
        default=None,
        help="Number of generated candidates (default: 64)",
    )
    parser.add_argument(
        "--candidate-seed",
        type=int,
        default=None,
        help="Latent seed of the first candidate; candidate i uses this seed + i",
    )
    return parser


def setup_sample_gan_parser(parent_parser):
    parser = parent_parser.add_parser(
        "sample_gan",
        aliases=["sample-gan"],
        help=SAMPLE_GAN_HELP,
        parents=[get_sample_gan_parser()],
    )
    parser.set_defaults(func=cmd_run_sample_gan)

    return parser


def cmd_run_sample_gan(args):
    from skyaug.gan.gan_model import _run_sample_gan

    _run_sample_gan(args)


PSEUDOLABEL_HELP = "Estimate binary maps for the generated images (2-means + majority smoothing)"
def get_pseudolabel_parser():
    parser = argparse.ArgumentParser(
        description=PSEUDOLABEL_HELP,
        allow_abbrev=False,
        add_help=False,
        parents=[get_common_parser()],
    )
    parser.add_argument(
        "--invert-cloud-rule",
        action="store_const",
        const=True,
        default=None,
        help="Label the darker cluster as cloud instead of the brighter one",
    )
    parser.add_argument(
        "--window-radius",
        type=int,
        default=None,
        help="Radius r of the (2r+1)x(2r+1) majority window (default: 2)",
    )
    parser.add_argument(
        "--max-passes",
        type=int,
        default=None,
        help="Cap on majority-filter passes; smoothing otherwise runs to a fixed point (default: 100)",
    )
    return parser


def setup_pseudolabel_parser(parent_parser):
    parser = parent_parser.add_parser(
        "pseudolabel",
        help=PSEUDOLABEL_HELP,
        parents=[get_pseudolabel_parser()],
    )
    parser.set_defaults(func=cmd_run_pseudolabel)

    return parser


def cmd_run_pseudolabel(args):
    from skyaug.segmentation.pseudolabel import _run_pseudolabel

    _run_pseudolabel(args)


def _add_r2_mode(parser):
    parser.add_argument(
        "--r2-mode",
        type=str,
        default=None,
        choices=R2_MODES,
        help="R² pooled over all pixels of the set, or averaged per image (default: pooled)",
    )


TUNE_PLS_HELP = "Sweep the number of PLS components and pick the best on validation R²"
def get_tune_pls_parser():
    parser = argparse.ArgumentParser(
        description=TUNE_PLS_HELP,
        allow_abbrev=False,
        add_help=False,
        parents=[get_common_parser()],
    )
    parser.add_argument(
        "--sweep-max",
        type=int,
        default=None,
        help="Largest n_comp in the sweep (default: 20)",
    )
    _add_r2_mode(parser)
    return parser


def setup_tune_pls_parser(parent_parser):
    parser = parent_parser.add_parser(
        "tune_pls",
        aliases=["tune-pls"],
        help=TUNE_PLS_HELP,
        parents=[get_tune_pls_parser()],
    )
    parser.set_defaults(func=cmd_run_tune_pls)

    return parser


def cmd_run_tune_pls(args):
    from skyaug.segmentation.pls import _run_tune_pls

    _run_tune_pls(args)


FILTER_HELP = "Keep the generated candidates that do not lower validation R²"
def get_filter_parser():
    parser = argparse.ArgumentParser(
        description=FILTER_HELP,
        allow_abbrev=False,
        add_help=False,
        parents=[get_common_parser()],
    )
    parser.add_argument(
        "--filter-mode",
        type=str,
        default=None,
        choices=FILTER_MODES,
        help="Judge candidates against the fixed training set, or accumulate accepted ones",
    )
    _add_r2_mode(parser)
    return parser


def setup_filter_parser(parent_parser):
    parser = parent_parser.add_parser(
        "filter",
        help=FILTER_HELP,
        parents=[get_filter_parser()],
    )
    parser.set_defaults(func=cmd_run_filter)

    return parser


def cmd_run_filter(args):
    from skyaug.segmentation.filtering import _run_filter

    _run_filter(args)


TRAIN_FINAL_HELP = "Fit the final PLS models on the original and the augmented training sets"
def get_train_final_parser():
    parser = argparse.ArgumentParser(
        description=TRAIN_FINAL_HELP,
        allow_abbrev=False,
        add_help=False,
        parents=[get_common_parser()],
    )
    return parser


def setup_train_final_parser(parent_parser):
    parser = parent_parser.add_parser(
        "train_final",
        aliases=["train-final"],
        help=TRAIN_FINAL_HELP,
        parents=[get_train_final_parser()],
    )
    parser.set_defaults(func=cmd_run_train_final)

    return parser


def cmd_run_train_final(args):
    from skyaug.segmentation.pls import _run_train_final

    _run_train_final(args)


EVALUATE_HELP = "Per-image ROC, optimal thresholds and precision/recall/F-score for both models"
def get_evaluate_parser():
    parser = argparse.ArgumentParser(
        description=EVALUATE_HELP,
        allow_abbrev=False,
        add_help=False,
        parents=[get_common_parser()],
    )
    parser.add_argument(
        "--threshold-criterion",
        type=str,
        default=None,
        choices=THRESHOLD_CRITERIA,
        help="Per-image operating point: Youden's J or closest to the (0, 1) corner",
    )
    _add_r2_mode(parser)
    return parser


def setup_evaluate_parser(parent_parser):
    parser = parent_parser.add_parser(
        "evaluate",
        help=EVALUATE_HELP,
        parents=[get_evaluate_parser()],
    )
    parser.set_defaults(func=cmd_run_evaluate)

    return parser


def cmd_run_evaluate(args):
    from skyaug.evaluation.evalmetrics import _run_evaluate

    _run_evaluate(args)


REPORT_HELP = "Collect sweep, filter and ROC plot data (and optional SVG figures) under report/"
def get_report_parser():
    parser = argparse.ArgumentParser(
        description=REPORT_HELP,
        allow_abbrev=False,
        add_help=False,
        parents=[get_common_parser()],
    )
    parser.add_argument(
        "--no-svg",
        dest="render_svg",
        action="store_const",
        const=False,
        default=None,
        help="Only write the CSV plot data",
    )
    return parser


def setup_report_parser(parent_parser):
    parser = parent_parser.add_parser(
        "report",
        help=REPORT_HELP,
        parents=[get_report_parser()],
    )
    parser.set_defaults(func=cmd_run_report)

    return parser


def cmd_run_report(args):
    from skyaug.metadata.report import _run_report

    _run_report(args)


STAGE_PARSERS = [
    get_prepare_parser,
    get_train_gan_parser,
    get_sample_gan_parser,
    get_pseudolabel_parser,
    get_tune_pls_parser,
    get_filter_parser,
    get_train_final_parser,
    get_evaluate_parser,
    get_report_parser,
]

RUN_HELP = "Run every stage in order, skipping the ones that are up to date"
def get_run_parser():
    # the stage parsers share options, hence 'resolve'
    parser = argparse.ArgumentParser(
        description=RUN_HELP,
        allow_abbrev=False,
        add_help=False,
        conflict_handler="resolve",
        parents=[get() for get in STAGE_PARSERS],
    )
    return parser


def setup_run_parser(parent_parser):
    parser = parent_parser.add_parser(
        "run",
        help=RUN_HELP,
        conflict_handler="resolve",
        parents=[get_run_parser()],
    )
    parser.set_defaults(func=cmd_run_pipeline)

    return parser


def cmd_run_pipeline(args):
    from skyaug.pipeline import _run_pipeline

    _run_pipeline(args)


CONFIG_HELP = "Print the resolved configuration as 'key = value' lines"
def get_config_parser():
    return get_run_parser()


def setup_config_parser(parent_parser):
    parser = parent_parser.add_parser(
        "config",
        help=CONFIG_HELP,
        conflict_handler="resolve",
        parents=[get_config_parser()],
    )
    parser.set_defaults(func=cmd_run_config)

    return parser


def cmd_run_config(args):
    from skyaug.pipeline import _run_config

    _run_config(args)


def cmdline_args(argv=None):
    parent_parser = argparse.ArgumentParser(
        allow_abbrev=False,
        description="Sky/cloud segmentation with GAN-based training-set augmentation and PLS regression",
    )
    parent_parser_subparsers = parent_parser.add_subparsers(title="commands", dest="subcommand")
    parent_parser.add_argument(
        "--version",
        action="store_true",
        help="Print the skyaug version and exit",
    )

    setup_prepare_parser(parent_parser_subparsers)
    setup_train_gan_parser(parent_parser_subparsers)
    setup_sample_gan_parser(parent_parser_subparsers)
    setup_pseudolabel_parser(parent_parser_subparsers)
    setup_tune_pls_parser(parent_parser_subparsers)
    setup_filter_parser(parent_parser_subparsers)
    setup_train_final_parser(parent_parser_subparsers)
    setup_evaluate_parser(parent_parser_subparsers)
    setup_report_parser(parent_parser_subparsers)

    setup_run_parser(parent_parser_subparsers)
    setup_config_parser(parent_parser_subparsers)

    return parent_parser, parent_parser.parse_args(argv)


def cmdline_main(argv=None) -> int:
    """
    Parse the command line and dispatch to a subcommand.

    Returns:
        int: exit code (0 success, 1 usage error, 2 data error, 3 stage-order error).
    """
    import skyaug

    try:
        parser, args = cmdline_args(argv)
    except SystemExit as e:
        # argparse exits with 2 on usage errors
        return UsageError.exit_code if e.code else 0

    if args.version and args.subcommand is None:
        print(skyaug.__version__)
        return 0
    else:
        del args.version

    if "func" not in args:
        parser.print_help()
        return 0

    logging.info(f"skyaug {args.subcommand} - running with the following parameters:")
    logging.info(args.__dict__)
    try:
        args.func(args)
    except SkyaugError as e:
        logging.error(str(e))
        return e.exit_code
    except FileNotFoundError as e:
        logging.error(str(e))
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(cmdline_main())
