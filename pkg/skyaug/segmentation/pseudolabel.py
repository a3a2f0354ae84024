"""
Pseudo ground truth for generated images: 2-means on R−B intensities, then an
iterated majority filter turning pixel-wise maps into area-wise maps.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.ndimage import convolve
from sklearn.cluster import KMeans

from skyaug.preprocessing.imageio import check_binary_map, check_raw_image

CANDIDATE_COLUMNS = ["candidate_id", "image_path", "map_path", "latent_seed", "generator_sha256"]
VERDICTS = ("unset", "favorable", "unfavorable")


@dataclass(frozen=True)
class ClusterConfig:
    k: int = 2
    max_iters: int = 100
    tol: float = 1e-6
    seed: int = 0
    invert_cloud_rule: bool = False

    def __post_init__(self):
        if self.k != 2:
            raise ValueError("Only two clusters (cloud and sky) are supported")


@dataclass(frozen=True)
class SmoothConfig:
    window_radius: int = 2
    max_passes: int = 100

    def __post_init__(self):
        if self.window_radius < 1:
            raise ValueError("window_radius must be >= 1")
        if self.max_passes < 1:
            raise ValueError("max_passes must be >= 1")


@dataclass
class Candidate:
    """A generated image, its estimated map, where it came from and (after filtering) its verdict."""
    image: np.ndarray
    map: np.ndarray
    provenance: Tuple[str, int] = ("", -1)
    candidate_id: int = 0
    verdict: str = "unset"
    r2_val_with: Optional[float] = None
    r2_train_with: Optional[float] = None

    def __post_init__(self):
        check_binary_map(self.map, like=check_raw_image(self.image))
        if self.verdict not in VERDICTS:
            raise ValueError(f"verdict must be one of {VERDICTS}")


def kmeans_pixels(img: np.ndarray, cfg: ClusterConfig = ClusterConfig()) -> np.ndarray:
    """
    Label each pixel cloud/sky by 1-D 2-means over its intensity.

    Centroids start at the minimum and maximum intensity and Lloyd iterations run
    on the intensity histogram (unique values weighted by their counts) until
    the labels stop changing or the centroids move by at most `cfg.tol` in
    total (Euclidean norm over both centroids, in intensity units). The
    cluster with the higher centroid is cloud, or the lower one when
    `cfg.invert_cloud_rule` is set. A constant image is all sky.

    Args:
        img (np.ndarray): Raw uint8 image.
        cfg (ClusterConfig): Iteration limits and the cloud rule.

    Returns:
        np.ndarray: Boolean map, True = cloud.
    """
    img = check_raw_image(img)
    values, inverse, counts = np.unique(img, return_inverse=True, return_counts=True)
    if len(values) == 1:
        return np.zeros(img.shape, dtype=bool)

    intensities = values.astype(np.float64)[:, None]
    # sklearn stops once the summed squared centroid shift is below tol times the data variance
    sklearn_tol = cfg.tol ** 2 / float(np.var(intensities))
    kmeans = KMeans(
        n_clusters=2,
        init=np.array([[intensities.min()], [intensities.max()]]),
        n_init=1,
        max_iter=cfg.max_iters,
        tol=sklearn_tol,
        algorithm="lloyd",
        random_state=cfg.seed,
    ).fit(intensities, sample_weight=counts.astype(np.float64))

    centers = kmeans.cluster_centers_[:, 0]
    cloud_cluster = int(np.argmin(centers) if cfg.invert_cloud_rule else np.argmax(centers))
    cloud_values = kmeans.labels_ == cloud_cluster
    return cloud_values[inverse.reshape(-1)].reshape(img.shape)


def _window_counts(binary_map: np.ndarray, radius: int) -> Tuple[np.ndarray, np.ndarray]:
    kernel = np.ones((2 * radius + 1, 2 * radius + 1), dtype=np.int64)
    cloud = convolve(binary_map.astype(np.int64), kernel, mode="constant", cval=0)
    # truncated edge windows hold fewer pixels
    total = convolve(np.ones(binary_map.shape, dtype=np.int64), kernel, mode="constant", cval=0)
    return cloud, total


def smooth_map(binary_map: np.ndarray, cfg: SmoothConfig = SmoothConfig()) -> np.ndarray:
    """
    Iterated majority filter over (2r+1)² windows.

    Each pixel takes the majority label of its window (edge windows are
    truncated, ties keep the current label). Passes repeat until nothing
    changes; `cfg.max_passes` only caps the work, and reaching it without a
    fixed point (or entering a 2-cycle) is logged as a warning.
    """
    _map = check_binary_map(binary_map).astype(bool)
    previous = None
    for i in range(cfg.max_passes):
        cloud, total = _window_counts(_map, cfg.window_radius)
        updated = np.where(2 * cloud > total, True, np.where(2 * cloud < total, False, _map))
        if np.array_equal(updated, _map):
            logging.debug(f"Majority filter reached a fixed point after {i} passes")
            return _map
        if previous is not None and np.array_equal(updated, previous):
            logging.warning(f"Majority filter entered a 2-cycle after {i} passes")
            return _map
        previous, _map = _map, updated
    logging.warning(f"Majority filter stopped at max_passes={cfg.max_passes} without reaching a fixed point")
    return _map


def pseudolabel(img: np.ndarray, cluster_cfg: ClusterConfig, smooth_cfg: SmoothConfig) -> np.ndarray:
    return smooth_map(kmeans_pixels(img, cluster_cfg), smooth_cfg)


def make_candidates(gen, n: int, seeds: Union[int, Sequence[int]], cluster_cfg: ClusterConfig = ClusterConfig(),
                    smooth_cfg: SmoothConfig = SmoothConfig(), generator_id: str = "") -> List[Candidate]:
    """
    Sample `n` images from a generator and attach their pseudo-labelled maps.

    Args:
        gen (SkyGenerator): Trained generator.
        n (int): Number of candidates.
        seeds (int or sequence of int): One latent seed per candidate, or a base
            seed (candidate i then uses base + i).
        cluster_cfg (ClusterConfig): Clustering settings.
        smooth_cfg (SmoothConfig): Smoothing settings.
        generator_id (str): Identifier recorded in the provenance.

    Returns:
        list of Candidate
    """
    from skyaug.gan.gan_model import sample

    seeds = [seeds + i for i in range(n)] if isinstance(seeds, (int, np.integer)) else list(seeds)
    if len(seeds) != n:
        raise ValueError(f"Expected {n} seeds, got {len(seeds)}")

    candidates = []
    for i, seed in enumerate(seeds):
        img = sample(gen, 1, seed)[0]
        candidates.append(Candidate(img, pseudolabel(img, cluster_cfg, smooth_cfg), (generator_id, int(seed)), i))
    return candidates


def read_candidates(manifest_path) -> List[Candidate]:
    """Load persisted candidates; paths in the manifest are relative to its directory."""
    from skyaug.preprocessing.imageio import load_image_file, load_map_file
    from skyaug.utils.errors import DataError

    manifest = pd.read_csv(manifest_path, dtype={"generator_sha256": str}, keep_default_na=False)
    if list(manifest.columns) != CANDIDATE_COLUMNS:
        raise DataError(f"Malformed candidate manifest '{manifest_path}': expected columns {CANDIDATE_COLUMNS}")

    base = Path(manifest_path).parent
    return [
        Candidate(load_image_file(base / row.image_path), load_map_file(base / row.map_path),
                  (row.generator_sha256, int(row.latent_seed)), int(row.candidate_id))
        for row in manifest.itertuples(index=False)
    ]


def pseudolabel_stage(config, outdir: Path):
    from skyaug.preprocessing.imageio import load_image_file, save_map_file
    from skyaug.utils.file import ensure_directory
    from skyaug.utils.stages import CANDIDATES_MANIFEST, SAMPLES_MANIFEST

    cluster_cfg = ClusterConfig(max_iters=config.cluster_max_iters, tol=config.cluster_tol,
                                invert_cloud_rule=config.invert_cloud_rule)
    smooth_cfg = SmoothConfig(window_radius=config.window_radius, max_passes=config.max_passes)

    samples = pd.read_csv(outdir / SAMPLES_MANIFEST, dtype={"generator_sha256": str}, keep_default_na=False)
    candidates_dir = outdir / "candidates"
    images = [load_image_file(candidates_dir / p) for p in samples["image_path"]]

    logging.info(f"Estimating maps for {len(images)} generated images")
    maps = Parallel(n_jobs=config.num_workers)(
        delayed(pseudolabel)(img, cluster_cfg, smooth_cfg) for img in images
    )

    ensure_directory(candidates_dir / "maps")
    map_paths = []
    for candidate_id, binary_map in zip(samples["candidate_id"], maps):
        map_path = Path("maps") / f"{int(candidate_id):04d}.pgm"
        save_map_file(binary_map, candidates_dir / map_path)
        map_paths.append(map_path.as_posix())

    manifest = samples.assign(map_path=map_paths)[CANDIDATE_COLUMNS]
    manifest.to_csv(outdir / CANDIDATES_MANIFEST, index=False)
    cloud_fraction = float(np.mean([m.mean() for m in maps])) if maps else 0.0
    logging.info(f"Wrote {len(maps)} candidates (mean cloud fraction {cloud_fraction:.3f})")


def _run_pseudolabel(args):
    from skyaug.utils.stages import config_from_args, run_stage

    run_stage(config_from_args(args), "pseudolabel", pseudolabel_stage, force=args.force)


if __name__ == "__main__":
    from skyaug.cli import get_pseudolabel_parser
    args = get_pseudolabel_parser().parse_args()
    _run_pseudolabel(args)
