"""
Favorable-candidate filter: a generated (image, map) pair joins the training
set only if refitting with it does not lower the validation R².
"""
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from skyaug.segmentation.pls import PlsConfig, fit_pls2, predict, r2_score, to_design_matrix, to_target_matrix
from skyaug.segmentation.pseudolabel import Candidate
from skyaug.utils.config import FILTER_MODES

# absolute slack on the R² comparison; exact duplicates need none since their refit is unchanged
TIE_TOL = 1e-9
REPORT_COLUMNS = ["candidate_id", "latent_seed", "baseline_r2_val", "r2_train_with", "r2_val_with", "verdict",
                  "duplicate", "mode"]

Matrices = Tuple[np.ndarray, np.ndarray]


@dataclass(frozen=True)
class Decision:
    candidate_id: int
    latent_seed: int
    baseline_r2_val: float
    r2_train_with: float
    r2_val_with: float
    verdict: str
    duplicate: bool = False


@dataclass
class FilterReport:
    """
    Per-candidate decisions of one filter run.

    The CSV form has one row per candidate and no separate header row: the
    baseline validation R² and the filter mode are repeated as columns on
    every row. `added_ids` lists the accepted candidates that actually grew the
    training set; accepted exact duplicates of rows already present add nothing.
    """
    baseline_r2_val: float
    mode: str = "independent"
    decisions: List[Decision] = field(default_factory=list)
    added_ids: List[int] = field(default_factory=list)

    @property
    def accepted_count(self) -> int:
        return sum(d.verdict == "favorable" for d in self.decisions)

    @property
    def accepted_ids(self) -> List[int]:
        return [d.candidate_id for d in self.decisions if d.verdict == "favorable"]

    def to_dataframe(self) -> pd.DataFrame:
        rows = [(d.candidate_id, d.latent_seed, d.baseline_r2_val, d.r2_train_with, d.r2_val_with, d.verdict,
                 d.duplicate, self.mode) for d in self.decisions]
        return pd.DataFrame(rows, columns=REPORT_COLUMNS)

    def to_csv(self, path) -> None:
        self.to_dataframe().to_csv(path, index=False)


def _check_nonempty(train: Matrices, val: Matrices):
    if len(train[0]) == 0 or len(val[0]) == 0:
        raise ValueError("The training and validation sets must be non-empty")


def _candidate_rows(c: Candidate) -> Matrices:
    return to_design_matrix([c.image]), to_target_matrix([c.map])


def _contains(rows: Matrices, row: Matrices) -> bool:
    """Whether the single (x, y) row already occurs in `rows`, compared exactly."""
    X, Y = rows
    return bool(np.any(np.all(X == row[0], axis=1) & np.all(Y == row[1], axis=1)))


def _with(train: Matrices, rows: Matrices) -> Matrices:
    """Set union of `train` and one candidate row; a row already present leaves `train` as is."""
    if _contains(train, rows):
        return train
    return np.vstack([train[0], rows[0]]), np.vstack([train[1], rows[1]])


def baseline(train: Matrices, val: Matrices, pls_cfg: PlsConfig) -> float:
    """Validation R² of a model fitted on `train` at `pls_cfg.n_comp`."""
    _check_nonempty(train, val)
    model = fit_pls2(train[0], train[1], pls_cfg.n_comp)
    return r2_score(val[1], predict(model, val[0]), pls_cfg.r2_mode)


def evaluate_candidate(train: Matrices, val: Matrices, c: Candidate, pls_cfg: PlsConfig,
                       baseline_r2_val: float) -> Decision:
    """
    Refit on train ∪ {c} and compare the validation R² with the baseline.

    The union is a set: a candidate whose (image, map) row is already in
    `train` refits the unchanged training set, reproducing the baseline, and is
    therefore favorable. Otherwise the candidate is favorable unless its
    validation R² is below the baseline by more than TIE_TOL.
    """
    _check_nonempty(train, val)
    rows = _candidate_rows(c)
    duplicate = _contains(train, rows)
    X, Y = _with(train, rows)
    model = fit_pls2(X, Y, pls_cfg.n_comp)
    r2_val_with = r2_score(val[1], predict(model, val[0]), pls_cfg.r2_mode)
    r2_train_with = r2_score(Y, predict(model, X), pls_cfg.r2_mode)
    verdict = "favorable" if duplicate or r2_val_with >= baseline_r2_val - TIE_TOL else "unfavorable"
    return Decision(c.candidate_id, c.provenance[1], baseline_r2_val, r2_train_with, r2_val_with, verdict,
                    duplicate)


def _grow(report: FilterReport, augmented: Matrices, c: Candidate) -> Matrices:
    grown = _with(augmented, _candidate_rows(c))
    if grown is not augmented:
        report.added_ids.append(c.candidate_id)
    return grown


def filter_candidates(train: Matrices, val: Matrices, candidates: Sequence[Candidate], pls_cfg: PlsConfig,
                      mode: str = "independent", n_jobs: int = 1) -> Tuple[FilterReport, Matrices]:
    """
    Judge every candidate and build the augmented training set.

    In `independent` mode each candidate is refitted against the fixed training
    set and baseline, in parallel; verdicts do not depend on candidate order.
    In `sequential` mode accepted candidates accumulate into the training set
    and the baseline moves to the last accepted validation R².
    Accepted candidates already present in the (accumulated) training set are
    not added again, so the augmented set grows by `len(report.added_ids)`.

    Args:
        train (tuple): (X, Y) training matrices.
        val (tuple): (X, Y) validation matrices.
        candidates (list of Candidate): Candidates in report order. Their
            verdict and R² fields are updated in place.
        pls_cfg (PlsConfig): n_comp and R² mode, fixed from the unaugmented sweep.
        mode (str): independent | sequential.
        n_jobs (int): Parallel workers for independent mode.

    Returns:
        tuple: (FilterReport, augmented (X, Y) training matrices)
    """
    if mode not in FILTER_MODES:
        raise ValueError(f"Unknown filter mode '{mode}', expected one of {FILTER_MODES}")

    base_r2 = baseline(train, val, pls_cfg)
    logging.info(f"Baseline validation R² {base_r2:.6f} at n_comp={pls_cfg.n_comp} ({mode} filtering)")
    report = FilterReport(base_r2, mode)

    if mode == "independent":
        report.decisions = list(Parallel(n_jobs=n_jobs)(
            delayed(evaluate_candidate)(train, val, c, pls_cfg, base_r2) for c in candidates
        ))
        augmented = train
        for c, d in zip(candidates, report.decisions):
            if d.verdict == "favorable":
                augmented = _grow(report, augmented, c)
    else:
        augmented, current = train, base_r2
        for c in candidates:
            d = evaluate_candidate(augmented, val, c, pls_cfg, current)
            report.decisions.append(d)
            if d.verdict == "favorable":
                augmented = _grow(report, augmented, c)
                current = d.r2_val_with

    for c, d in zip(candidates, report.decisions):
        c.verdict, c.r2_val_with, c.r2_train_with = d.verdict, d.r2_val_with, d.r2_train_with

    logging.info(f"Accepted {report.accepted_count} of {len(report.decisions)} candidates, "
                 f"{len(report.added_ids)} new to the training set")
    return report, augmented


def filter_stage(config, outdir: Path):
    from skyaug.preprocessing.imageio import MANIFEST_COLUMNS, load_split_pairs, read_manifest, write_manifest
    from skyaug.segmentation.pls import SweepReport, pairs_to_matrices
    from skyaug.segmentation.pseudolabel import read_candidates
    from skyaug.utils.file import ensure_directory
    from skyaug.utils.stages import (AUGMENTED_MANIFEST, CANDIDATES_MANIFEST, DATA_MANIFEST, FILTER_REPORT,
                                     SWEEP_REPORT)

    train = pairs_to_matrices(load_split_pairs(outdir / DATA_MANIFEST, "train"))
    val = pairs_to_matrices(load_split_pairs(outdir / DATA_MANIFEST, "val"))
    pls_cfg = PlsConfig(SweepReport.from_csv(outdir / SWEEP_REPORT).chosen, config.r2_mode)
    candidates = read_candidates(outdir / CANDIDATES_MANIFEST)

    report, _ = filter_candidates(train, val, candidates, pls_cfg, config.filter_mode, config.num_workers)
    ensure_directory(outdir / "filter")
    report.to_csv(outdir / FILTER_REPORT)

    # augmented manifest paths are relative to filter/
    data = read_manifest(outdir / DATA_MANIFEST)
    data = data[data["split"] == "train"]
    candidate_rows = pd.read_csv(outdir / CANDIDATES_MANIFEST, keep_default_na=False)
    candidate_rows = candidate_rows[candidate_rows["candidate_id"].isin(report.added_ids)]
    augmented = pd.concat([
        pd.DataFrame({
            "image_path": [os.path.join("..", "data", p) for p in data["image_path"]],
            "map_path": [os.path.join("..", "data", p) for p in data["map_path"]],
            "split": "train",
        }),
        pd.DataFrame({
            "image_path": [os.path.join("..", "candidates", p) for p in candidate_rows["image_path"]],
            "map_path": [os.path.join("..", "candidates", p) for p in candidate_rows["map_path"]],
            "split": "train",
        }),
    ], ignore_index=True)[MANIFEST_COLUMNS]
    write_manifest(augmented, outdir / AUGMENTED_MANIFEST)
    logging.info(f"Augmented training set: {len(augmented)} images")


def _run_filter(args):
    from skyaug.utils.stages import config_from_args, run_stage

    run_stage(config_from_args(args), "filter", filter_stage, force=args.force)


if __name__ == "__main__":
    from skyaug.cli import get_filter_parser
    args = get_filter_parser().parse_args()
    _run_filter(args)
