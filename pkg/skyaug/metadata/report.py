import logging
import shutil
from pathlib import Path

import pandas as pd

from skyaug.utils.file import ensure_directory

INDEX_COLUMNS = ["artifact", "kind", "source"]


def _plot_sweep(sweep: pd.DataFrame, path):
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(sweep["n_comp"], sweep["r2_train"], marker="o", label="train")
    ax.plot(sweep["n_comp"], sweep["r2_val"], marker="o", label="validation")
    best = sweep.loc[sweep["r2_val"].idxmax()]
    ax.axvline(best["n_comp"], color="grey", linestyle="--", linewidth=0.8)
    ax.set_xlabel("n_comp")
    ax.set_ylabel("R²")
    ax.legend()
    _save(fig, path)


def _plot_filter(decisions: pd.DataFrame, path):
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    favorable = decisions["verdict"] == "favorable"
    ax.scatter(decisions.loc[favorable, "candidate_id"], decisions.loc[favorable, "r2_val_with"], s=10,
               label="favorable")
    ax.scatter(decisions.loc[~favorable, "candidate_id"], decisions.loc[~favorable, "r2_val_with"], s=10,
               marker="x", label="unfavorable")
    ax.step(decisions["candidate_id"], decisions["baseline_r2_val"], where="mid", color="grey", linewidth=0.8,
            label="baseline")
    ax.set_xlabel("candidate")
    ax.set_ylabel("validation R²")
    ax.legend()
    _save(fig, path)


def _plot_roc(curves, path, title):
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(4, 4))
    for roc in curves:
        ax.plot(roc["fpr"], roc["tpr"], linewidth=0.6, alpha=0.7)
    ax.plot([0, 1], [0, 1], color="grey", linestyle=":", linewidth=0.8)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_title(title)
    _save(fig, path)


def _save(fig, path):
    import matplotlib.pyplot as plt

    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def report(config, outdir: Path):
    """
    Collect the plot data of the run under `report/` and, if enabled, render SVGs.

    Copies the n_comp sweep, the filter decisions, the comparison table and
    every per-image ROC CSV, then writes `report/index.csv` listing them.
    """
    from skyaug.utils.stages import CASES, COMPARISON, FILTER_REPORT, REPORT_INDEX, SWEEP_REPORT

    report_dir = ensure_directory(outdir / "report")
    index = []

    def _copy(source: Path, name: str):
        shutil.copyfile(source, report_dir / name)
        index.append((name, "csv", source.relative_to(outdir).as_posix()))

    _copy(outdir / SWEEP_REPORT, "sweep.csv")
    _copy(outdir / FILTER_REPORT, "filter_decisions.csv")
    _copy(outdir / COMPARISON, "comparison.csv")

    roc_files = {}
    for case in CASES:
        roc_dir = outdir / "evaluate" / "roc" / case
        roc_files[case] = sorted(roc_dir.glob("*.csv")) if roc_dir.is_dir() else []
        for f in roc_files[case]:
            _copy(f, f"roc_{case}_{f.name}")

    if config.render_svg:
        import matplotlib

        matplotlib.use("Agg")
        matplotlib.rcParams["svg.hashsalt"] = "skyaug"

        svgs = [("sweep.svg", SWEEP_REPORT, lambda p: _plot_sweep(pd.read_csv(outdir / SWEEP_REPORT), p))]
        decisions = pd.read_csv(outdir / FILTER_REPORT)
        if len(decisions):
            svgs.append(("filter_decisions.svg", FILTER_REPORT, lambda p: _plot_filter(decisions, p)))
        for case in CASES:
            if roc_files[case]:
                curves = [pd.read_csv(f) for f in roc_files[case]]
                svgs.append((f"roc_{case}.svg", f"evaluate/roc/{case}",
                             lambda p, c=curves, t=case.replace("_", " "): _plot_roc(c, p, t)))

        for name, source, render in svgs:
            render(report_dir / name)
            index.append((name, "svg", source))

    pd.DataFrame(index, columns=INDEX_COLUMNS).to_csv(outdir / REPORT_INDEX, index=False)
    logging.info(f"Report with {len(index)} artifacts written to {report_dir}")


def _run_report(args):
    from skyaug.utils.stages import config_from_args, run_stage

    config = config_from_args(args)
    if not Path(config.outdir).is_dir():
        raise FileNotFoundError(f"The output directory '{config.outdir}' does not exist")
    run_stage(config, "report", report, force=args.force)


if __name__ == "__main__":
    from skyaug.cli import get_report_parser
    args = get_report_parser().parse_args()
    _run_report(args)
