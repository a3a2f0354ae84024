"""
Per-image evaluation with clouds as the positive class: confusion matrices,
ROC curves, per-image optimal thresholds and precision / recall / F-score.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from sklearn.metrics import auc as sk_auc
from sklearn.metrics import confusion_matrix as sk_confusion_matrix
from sklearn.metrics import roc_curve as sk_roc_curve

from skyaug.utils.config import THRESHOLD_CRITERIA
from skyaug.utils.errors import DataError

METRICS_COLUMNS = ["image_id", "precision", "recall", "f_score", "thr", "auc", "single_class"]
COMPARISON_COLUMNS = ["case", "r2_train", "r2_test", "precision", "recall", "f_score"]
ROC_COLUMNS = ["threshold", "fpr", "tpr"]

# Published SWINSEG values at full resolution; for comparison only, not targets.
REFERENCE = {
    "without_augmentation": {"r2_train": 0.568, "r2_test": 0.372, "precision": 0.846, "recall": 0.749,
                             "f_score": 0.776},
    "after_augmentation": {"r2_train": 0.539, "r2_test": 0.377, "precision": 0.862, "recall": 0.744,
                           "f_score": 0.781},
}


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class RocCurve:
    """Points ordered by decreasing threshold, from (+inf, 0, 0) to (-inf, 1, 1)."""
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float

    @property
    def points(self) -> List[Tuple[float, float, float]]:
        return list(zip(self.thresholds.tolist(), self.fpr.tolist(), self.tpr.tolist()))

    def to_dataframe(self) -> pd.DataFrame:
        return pd.DataFrame(dict(zip(ROC_COLUMNS, (self.thresholds, self.fpr, self.tpr))))


@dataclass(frozen=True)
class ThresholdChoice:
    thr: float
    criterion_value: float


@dataclass
class ImageMetrics:
    image_id: int
    precision: float
    recall: float
    f_score: float
    thr: float
    auc: float = float("nan")
    single_class: bool = False
    roc: Optional[RocCurve] = field(default=None, repr=False)


@dataclass
class MetricsReport:
    images: List[ImageMetrics]
    r2_train: float
    r2_test: float

    def _mean(self, key):
        return float(np.mean([getattr(m, key) for m in self.images])) if self.images else 0.0

    @property
    def precision(self) -> float:
        return self._mean("precision")

    @property
    def recall(self) -> float:
        return self._mean("recall")

    @property
    def f_score(self) -> float:
        return self._mean("f_score")

    @property
    def single_class_count(self) -> int:
        return sum(m.single_class for m in self.images)

    def to_dataframe(self) -> pd.DataFrame:
        return pd.DataFrame(
            [(m.image_id, m.precision, m.recall, m.f_score, m.thr, m.auc, m.single_class) for m in self.images],
            columns=METRICS_COLUMNS,
        )

    def summary_row(self, case: str) -> tuple:
        return case, self.r2_train, self.r2_test, self.precision, self.recall, self.f_score


def _check_shapes(scores, gt):
    scores = np.asarray(scores, dtype=np.float64)
    gt = np.asarray(gt, dtype=bool)
    if scores.shape != gt.shape:
        raise ValueError(f"Score shape {scores.shape} does not match map shape {gt.shape}")
    return scores.ravel(), gt.ravel()


def confusion(scores: np.ndarray, gt: np.ndarray, thr: float) -> ConfusionMatrix:
    """Pixel counts for the prediction `score >= thr` against `gt` (cloud = positive)."""
    scores, gt = _check_shapes(scores, gt)
    predicted = scores >= thr
    tn, fp, fn, tp = sk_confusion_matrix(gt, predicted, labels=[False, True]).ravel()
    return ConfusionMatrix(int(tp), int(fp), int(tn), int(fn))


def roc_curve(scores: np.ndarray, gt: np.ndarray) -> RocCurve:
    """
    ROC over every distinct score, with +inf and -inf sentinels at the ends.

    Raises:
        DataError: If `gt` holds a single class ("ROC undefined").
    """
    scores, gt = _check_shapes(scores, gt)
    if gt.all() or not gt.any():
        raise DataError("ROC undefined: the ground truth holds a single class")

    fpr, tpr, thresholds = sk_roc_curve(gt, scores, drop_intermediate=False)
    thresholds = thresholds.astype(np.float64)
    thresholds[0] = np.inf
    if thresholds[-1] != -np.inf:
        thresholds = np.append(thresholds, -np.inf)
        fpr, tpr = np.append(fpr, 1.0), np.append(tpr, 1.0)
    return RocCurve(thresholds, fpr, tpr, float(sk_auc(fpr, tpr)))


def optimal_threshold(roc: RocCurve, criterion: str = "youden") -> ThresholdChoice:
    """
    Operating point of a ROC curve.

    `youden` maximizes J = tpr − fpr; `corner` minimizes the distance to
    (fpr, tpr) = (0, 1) and reports the negated distance. Ties go to the larger
    threshold.
    """
    if criterion == "youden":
        values = roc.tpr - roc.fpr
    elif criterion == "corner":
        values = -np.hypot(roc.fpr, 1.0 - roc.tpr)
    else:
        raise ValueError(f"Unknown threshold criterion '{criterion}', expected one of {THRESHOLD_CRITERIA}")
    # thresholds are decreasing, so the first maximum has the largest threshold
    best = int(np.argmax(values))
    return ThresholdChoice(float(roc.thresholds[best]), float(values[best]))


def prf(cm: ConfusionMatrix) -> Tuple[float, float, float]:
    """Precision, recall and F-score; every 0/0 is 0."""
    precision = cm.tp / (cm.tp + cm.fp) if cm.tp + cm.fp else 0.0
    recall = cm.tp / (cm.tp + cm.fn) if cm.tp + cm.fn else 0.0
    f_score = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f_score


def evaluate_image(image_id: int, scores: np.ndarray, gt: np.ndarray, criterion: str = "youden") -> ImageMetrics:
    """
    Metrics of one image at its own optimal threshold.

    Single-class images have no ROC; they are flagged, and the threshold is
    +inf (nothing predicted as cloud).
    """
    gt = np.asarray(gt, dtype=bool)
    if gt.all() or not gt.any():
        thr = float("inf")
        return ImageMetrics(image_id, *prf(confusion(scores, gt, thr)), thr=thr, single_class=True)

    roc = roc_curve(scores, gt)
    choice = optimal_threshold(roc, criterion)
    return ImageMetrics(image_id, *prf(confusion(scores, gt, choice.thr)), thr=choice.thr, auc=roc.auc, roc=roc)


def evaluate_model(model, test_set, train_set=None, criterion: str = "youden", r2_mode: str = "pooled",
                   n_jobs: int = 1) -> MetricsReport:
    """
    Evaluate a PLS model image by image.

    Args:
        model (PlsModel): Fitted model.
        test_set (list): (image, map) pairs to evaluate.
        train_set (list, optional): Training pairs for r2_train (nan when omitted).
        criterion (str): Threshold criterion, youden | corner.
        r2_mode (str): R² mode used for r2_train and r2_test.
        n_jobs (int): Parallel workers over images.

    Returns:
        MetricsReport: per-image rows in test-set order and their unweighted means.
    """
    from skyaug.segmentation.pls import pairs_to_matrices, predict, r2_score

    X_test, Y_test = pairs_to_matrices(test_set)
    Y_hat = predict(model, X_test)
    shape = np.shape(test_set[0][1])

    images = list(Parallel(n_jobs=n_jobs)(
        delayed(evaluate_image)(i, y_hat.reshape(shape), gt, criterion)
        for i, (y_hat, (_, gt)) in enumerate(zip(Y_hat, test_set))
    ))
    flagged = [m.image_id for m in images if m.single_class]
    if flagged:
        logging.warning(f"Single-class test images (no ROC, thr=+inf): {flagged}")

    r2_train = float("nan")
    if train_set is not None:
        X_train, Y_train = pairs_to_matrices(train_set)
        r2_train = r2_score(Y_train, predict(model, X_train), r2_mode)
    return MetricsReport(images, r2_train, r2_score(Y_test, Y_hat, r2_mode))


def comparison_table(reports: Sequence[Tuple[str, MetricsReport]]) -> pd.DataFrame:
    """One row per case: (case, r2_train, r2_test, precision, recall, f_score)."""
    return pd.DataFrame([r.summary_row(case) for case, r in reports], columns=COMPARISON_COLUMNS)


def f_score_direction(comparison: pd.DataFrame) -> str:
    """Whether the augmented case improves the mean F-score over the unaugmented one."""
    f = comparison.set_index("case")["f_score"]
    delta = f["after_augmentation"] - f["without_augmentation"]
    if delta > 0:
        return "improvement"
    return "no change" if delta == 0 else "degradation"


def render_summary(comparison: pd.DataFrame, reports: dict, config) -> str:
    """Render the plain-text summary (comparison tables, reference values, caveats)."""
    import jinja2

    env = jinja2.Environment(
        loader=jinja2.PackageLoader("skyaug.metadata", "templates"),
        trim_blocks=True,
        lstrip_blocks=True,
        keep_trailing_newline=True,
    )
    reference_direction = "improvement"
    direction = f_score_direction(comparison)
    return env.get_template("summary.txt.j2").render(
        rows=comparison.to_dict(orient="records"),
        reference=REFERENCE,
        direction=direction,
        matches_reference=direction == reference_direction,
        reports=reports,
        config=config,
    )


def evaluate_stage(config, outdir: Path):
    from skyaug.preprocessing.imageio import load_split_pairs
    from skyaug.segmentation.pls import PlsModel
    from skyaug.utils.file import ensure_directory
    from skyaug.utils.stages import (AUGMENTED_MANIFEST, CASES, COMPARISON, DATA_MANIFEST,
                                     MODEL_AFTER_AUGMENTATION, MODEL_WITHOUT_AUGMENTATION, SUMMARY)

    test_set = load_split_pairs(outdir / DATA_MANIFEST, "test")
    train_sets = {
        "without_augmentation": load_split_pairs(outdir / DATA_MANIFEST, "train"),
        "after_augmentation": load_split_pairs(outdir / AUGMENTED_MANIFEST, "train"),
    }
    models = {
        "without_augmentation": PlsModel.load(outdir / MODEL_WITHOUT_AUGMENTATION),
        "after_augmentation": PlsModel.load(outdir / MODEL_AFTER_AUGMENTATION),
    }

    evaluate_dir = ensure_directory(outdir / "evaluate")
    reports = {}
    for case in CASES:
        logging.info(f"Evaluating the model {case.replace('_', ' ')} on {len(test_set)} test images")
        report = evaluate_model(models[case], test_set, train_sets[case], config.threshold_criterion,
                                config.r2_mode, config.num_workers)
        report.to_dataframe().to_csv(evaluate_dir / f"metrics_{case}.csv", index=False)

        roc_dir = ensure_directory(evaluate_dir / "roc" / case)
        for m in report.images:
            if m.roc is not None:
                m.roc.to_dataframe().to_csv(roc_dir / f"{m.image_id:04d}.csv", index=False)
        reports[case] = report

    comparison = comparison_table([(case, reports[case]) for case in CASES])
    comparison.to_csv(outdir / COMPARISON, index=False)
    with open(outdir / SUMMARY, "w") as f:
        f.write(render_summary(comparison, reports, config))
    logging.info(f"F-score after augmentation vs without: {f_score_direction(comparison)}")


def _run_evaluate(args):
    from skyaug.utils.stages import config_from_args, run_stage

    run_stage(config_from_args(args), "evaluate", evaluate_stage, force=args.force)


if __name__ == "__main__":
    from skyaug.cli import get_evaluate_parser
    args = get_evaluate_parser().parse_args()
    _run_evaluate(args)
