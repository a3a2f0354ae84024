"""
PLS2 regression from flattened R−B images to flattened binary maps (NIPALS),
and the number-of-components sweep on the validation set.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from sklearn.metrics import r2_score as sk_r2_score

from skyaug.utils.checkpoint import load_checkpoint, save_checkpoint
from skyaug.utils.errors import DataError

INNER_TOL = 1e-10
INNER_MAX_ITERS = 500
SCORE_NORM_EPS = 1e-12
SWEEP_COLUMNS = ["n_comp", "r2_train", "r2_val"]


@dataclass(frozen=True)
class PlsConfig:
    n_comp: int = 1
    r2_mode: str = "pooled"


@dataclass
class PlsModel:
    x_mean: np.ndarray
    y_mean: np.ndarray
    W: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    B: np.ndarray
    n_comp: int
    # training x-scores; not persisted
    x_scores: np.ndarray = field(default=None, repr=False)

    def save(self, path) -> None:
        save_checkpoint(
            {"n_comp": self.n_comp, "x_mean": self.x_mean, "y_mean": self.y_mean,
             "W": self.W, "P": self.P, "Q": self.Q, "B": self.B},
            path,
        )

    @classmethod
    def load(cls, path) -> "PlsModel":
        entries = load_checkpoint(path)
        missing = {"n_comp", "x_mean", "y_mean", "W", "P", "Q", "B"} - set(entries)
        if missing:
            raise DataError(f"'{path}' is not a PLS model checkpoint (missing {sorted(missing)})")
        return cls(entries["x_mean"], entries["y_mean"], entries["W"], entries["P"], entries["Q"], entries["B"],
                   int(entries["n_comp"]))


@dataclass
class SweepReport:
    rows: List[Tuple[int, float, float]]

    @property
    def chosen(self) -> int:
        """n_comp with the highest validation R²; the first (smallest) wins ties."""
        r2_val = [r[2] for r in self.rows]
        return int(self.rows[int(np.argmax(r2_val))][0])

    def r2_val_at(self, n_comp: int) -> float:
        return dict((r[0], r[2]) for r in self.rows)[n_comp]

    def to_dataframe(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=SWEEP_COLUMNS)

    def to_csv(self, path) -> None:
        self.to_dataframe().to_csv(path, index=False)

    @classmethod
    def from_csv(cls, path) -> "SweepReport":
        df = pd.read_csv(path)
        if list(df.columns) != SWEEP_COLUMNS or len(df) == 0:
            raise DataError(f"Malformed sweep report '{path}'")
        return cls([(int(n), float(a), float(b)) for n, a, b in df.itertuples(index=False)])


def to_design_matrix(images: Sequence[np.ndarray]) -> np.ndarray:
    """Rows of flattened images rescaled to [0, 1]."""
    if len(images) == 0:
        raise ValueError("Cannot build a design matrix from zero images")
    return np.stack([np.asarray(img, dtype=np.float64).ravel() for img in images]) / 255.0


def to_target_matrix(maps: Sequence[np.ndarray]) -> np.ndarray:
    """Rows of flattened binary maps as {0, 1} reals."""
    if len(maps) == 0:
        raise ValueError("Cannot build a target matrix from zero maps")
    return np.stack([np.asarray(m, dtype=bool).ravel() for m in maps]).astype(np.float64)


def pairs_to_matrices(pairs) -> Tuple[np.ndarray, np.ndarray]:
    images, maps = zip(*pairs) if len(pairs) else ((), ())
    return to_design_matrix(images), to_target_matrix(maps)


def _nipals_component(X: np.ndarray, Y: np.ndarray):
    u = Y[:, int(np.argmax(Y.var(axis=0)))].copy()
    t_old = None
    for _ in range(INNER_MAX_ITERS):
        w = X.T @ u
        w_norm = np.linalg.norm(w)
        if w_norm < SCORE_NORM_EPS:
            return None
        w /= w_norm
        t = X @ w
        q = Y.T @ t
        q_norm = np.linalg.norm(q)
        if q_norm < SCORE_NORM_EPS:
            return w, t
        u = Y @ (q / q_norm)
        if t_old is not None and np.linalg.norm(t - t_old) <= INNER_TOL * max(np.linalg.norm(t), SCORE_NORM_EPS):
            break
        t_old = t
    return w, t


def fit_pls2(X: np.ndarray, Y: np.ndarray, n_comp: int) -> PlsModel:
    """
    Fit a PLS2 model with NIPALS.

    Columns are mean-centred (not scaled). Each component iterates
    w = Xᵀu/|Xᵀu|, t = Xw, q = Yᵀt/|Yᵀt|, u = Yq starting from the Y column of
    largest variance, then deflates X and Y by t. Extraction stops early when a
    score vector vanishes; the model records the achieved count.

    Args:
        X (np.ndarray): (n, features) design matrix.
        Y (np.ndarray): (n, outputs) targets.
        n_comp (int): Requested components, 1 <= n_comp <= min(n - 1, features).

    Returns:
        PlsModel

    Raises:
        ValueError: If the shapes disagree or n_comp is out of range.
        DataError: If X or Y has no variation ("degenerate data").
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    if X.ndim != 2 or X.shape[0] != Y.shape[0]:
        raise ValueError(f"X {X.shape} and Y {Y.shape} must be matrices with equal row counts")
    if X.shape[0] < 2:
        raise ValueError("At least two samples are needed to fit")
    if not np.all(np.isfinite(X)) or not np.all(np.isfinite(Y)):
        raise DataError("degenerate data: X and Y must be finite")
    max_comp = min(X.shape[0] - 1, X.shape[1])
    if not 1 <= n_comp <= max_comp:
        raise ValueError(f"n_comp must be in [1, {max_comp}], got {n_comp}")

    x_mean, y_mean = X.mean(axis=0), Y.mean(axis=0)
    Xa, Ya = X - x_mean, Y - y_mean
    if not np.any(Xa) or not np.any(Ya):
        raise DataError("degenerate data: X or Y has no variation")

    W, P, C, T = [], [], [], []
    for _ in range(n_comp):
        component = _nipals_component(Xa, Ya)
        if component is None:
            break
        w, t = component
        tt = t @ t
        if np.sqrt(tt) < SCORE_NORM_EPS:
            break
        p = Xa.T @ t / tt
        c = Ya.T @ t / tt
        Xa = Xa - np.outer(t, p)
        Ya = Ya - np.outer(t, c)
        W.append(w), P.append(p), C.append(c), T.append(t)

    achieved = len(W)
    if achieved == 0:
        raise DataError("degenerate data: no PLS component could be extracted")
    if achieved < n_comp:
        logging.warning(f"PLS extraction stopped after {achieved} of {n_comp} components")

    W, P, C, T = (np.stack(m, axis=1) for m in (W, P, C, T))
    B = W @ np.linalg.solve(P.T @ W, C.T)
    return PlsModel(x_mean, y_mean, W, P, C, B, achieved, x_scores=T)


def predict(model: PlsModel, X: np.ndarray) -> np.ndarray:
    """ŷ = (x − x_mean)·B + y_mean for each row of X (a single row may be 1-D)."""
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    _X = X[None, :] if single else X
    if _X.ndim != 2 or _X.shape[1] != model.B.shape[0]:
        raise ValueError(f"Expected {model.B.shape[0]} features, got shape {X.shape}")
    Y_hat = (_X - model.x_mean) @ model.B + model.y_mean
    return Y_hat[0] if single else Y_hat


def r2_score(Y: np.ndarray, Y_hat: np.ndarray, mode: str = "pooled") -> float:
    """
    Coefficient of determination.

    `pooled` is 1 − Σᵢⱼ(yᵢⱼ − ŷᵢⱼ)² / Σᵢⱼ(yᵢⱼ − ȳⱼ)² over every output column.
    `per_image` scores each row (one image) over its pixels and averages the rows.

    Raises:
        ValueError: On shape mismatch or an unknown mode.
        DataError: If the total variance is zero ("R² undefined").
    """
    Y = np.asarray(Y, dtype=np.float64)
    Y_hat = np.asarray(Y_hat, dtype=np.float64)
    if Y.shape != Y_hat.shape:
        raise ValueError(f"Shape mismatch: {Y.shape} vs {Y_hat.shape}")
    if Y.ndim == 1:
        Y, Y_hat = Y[:, None], Y_hat[:, None]

    if mode == "pooled":
        ss_tot = np.sum((Y - Y.mean(axis=0)) ** 2)
        if ss_tot == 0:
            raise DataError("R² undefined: the targets have zero total variance")
        return float(1.0 - np.sum((Y - Y_hat) ** 2) / ss_tot)
    if mode == "per_image":
        if np.all(Y == Y[:, :1]):
            raise DataError("R² undefined: every image has zero variance")
        return float(sk_r2_score(Y.T, Y_hat.T, multioutput="uniform_average"))
    raise ValueError(f"Unknown R² mode '{mode}'")


def _score_ncomp(train, val, n_comp, r2_mode):
    model = fit_pls2(train[0], train[1], n_comp)
    return (n_comp,
            r2_score(train[1], predict(model, train[0]), r2_mode),
            r2_score(val[1], predict(model, val[0]), r2_mode))


def sweep_ncomp(train: Tuple[np.ndarray, np.ndarray], val: Tuple[np.ndarray, np.ndarray], max_comp: int,
                r2_mode: str = "pooled", n_jobs: int = 1) -> SweepReport:
    """
    Fit n_comp = 1..max_comp on `train` and score training and validation R².

    `max_comp` is capped at min(rows − 1, features) of the training matrix.
    Fits are independent and run in parallel; rows come back in n_comp order.
    """
    if max_comp < 1:
        raise ValueError("max_comp must be >= 1")
    cap = min(train[0].shape[0] - 1, train[0].shape[1])
    if max_comp > cap:
        logging.warning(f"Capping the n_comp sweep at {cap} (requested {max_comp})")
        max_comp = cap

    rows = Parallel(n_jobs=n_jobs)(
        delayed(_score_ncomp)(train, val, n_comp, r2_mode) for n_comp in range(1, max_comp + 1)
    )
    report = SweepReport(list(rows))
    logging.info(f"Best validation R² {report.r2_val_at(report.chosen):.4f} at n_comp={report.chosen}")
    return report


def tune_pls_stage(config, outdir: Path):
    from skyaug.preprocessing.imageio import load_split_pairs
    from skyaug.utils.file import ensure_directory
    from skyaug.utils.stages import DATA_MANIFEST, SWEEP_REPORT

    train = pairs_to_matrices(load_split_pairs(outdir / DATA_MANIFEST, "train"))
    val = pairs_to_matrices(load_split_pairs(outdir / DATA_MANIFEST, "val"))

    report = sweep_ncomp(train, val, config.sweep_max, config.r2_mode, config.num_workers)
    ensure_directory(outdir / "pls")
    report.to_csv(outdir / SWEEP_REPORT)


def train_final_stage(config, outdir: Path):
    from skyaug.preprocessing.imageio import load_split_pairs
    from skyaug.utils.stages import (AUGMENTED_MANIFEST, DATA_MANIFEST, MODEL_AFTER_AUGMENTATION,
                                     MODEL_WITHOUT_AUGMENTATION, SWEEP_REPORT)

    n_comp = SweepReport.from_csv(outdir / SWEEP_REPORT).chosen
    for case, manifest, destination in (
        ("without augmentation", DATA_MANIFEST, MODEL_WITHOUT_AUGMENTATION),
        ("after augmentation", AUGMENTED_MANIFEST, MODEL_AFTER_AUGMENTATION),
    ):
        pairs = load_split_pairs(outdir / manifest, "train")
        logging.info(f"Fitting the final model {case} on {len(pairs)} images with n_comp={n_comp}")
        fit_pls2(*pairs_to_matrices(pairs), n_comp).save(outdir / destination)


def _run_tune_pls(args):
    from skyaug.utils.stages import config_from_args, run_stage

    run_stage(config_from_args(args), "tune_pls", tune_pls_stage, force=args.force)


def _run_train_final(args):
    from skyaug.utils.stages import config_from_args, run_stage

    run_stage(config_from_args(args), "train_final", train_final_stage, force=args.force)


if __name__ == "__main__":
    from skyaug.cli import get_tune_pls_parser
    args = get_tune_pls_parser().parse_args()
    _run_tune_pls(args)
