"""
Dataset plumbing: R−B extraction, train/val/test splitting, portable graymap I/O,
the SWINSEG loader and a hermetic synthetic dataset.

Images are plain numpy arrays:
    RgbImage   (H, W, 3) uint8
    RawImage   (H, W)    uint8, the rescaled R−B channel
    BinaryMap  (H, W)    bool, True = cloud
"""
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple

import cv2
import numpy as np
import pandas as pd
from natsort import natsorted
from PIL import Image, UnidentifiedImageError
from scipy.ndimage import zoom
from skimage.filters import gaussian

from skyaug.utils.errors import DataError
from skyaug.utils.file import check_file_exists, ensure_directory

TRAIN_FRACTION = 0.60
VAL_FRACTION = 0.1565
SPLITS = ["train", "val", "test"]
MANIFEST_COLUMNS = ["image_path", "map_path", "split"]
IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".pgm", ".ppm")
_HIGH_DEPTH_MODES = ("I", "I;16", "I;16B", "I;16L", "I;16N", "F")


@dataclass(frozen=True)
class DatasetSplit:
    train_ids: Tuple[int, ...]
    val_ids: Tuple[int, ...]
    test_ids: Tuple[int, ...]
    seed: int

    def sizes(self) -> Tuple[int, int, int]:
        return len(self.train_ids), len(self.val_ids), len(self.test_ids)

    def split_of(self, index: int) -> str:
        for name, ids in zip(SPLITS, (self.train_ids, self.val_ids, self.test_ids)):
            if index in ids:
                return name
        raise KeyError(index)


def round_half_away(x):
    """Round half away from zero (numpy's rint rounds half to even)."""
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def check_raw_image(img: np.ndarray) -> np.ndarray:
    if not isinstance(img, np.ndarray) or img.ndim != 2:
        raise ValueError("A raw image must be a two-dimensional array")
    if img.shape[0] == 0 or img.shape[1] == 0:
        raise ValueError("Image dimensions must be positive")
    if img.dtype != np.uint8:
        if img.min() < 0 or img.max() > 255 or not np.all(np.mod(img, 1) == 0):
            raise ValueError("Raw image intensities must be integers in [0, 255]")
        img = img.astype(np.uint8)
    return img


def check_binary_map(binary_map: np.ndarray, like: np.ndarray = None) -> np.ndarray:
    binary_map = np.asarray(binary_map)
    if binary_map.ndim != 2 or binary_map.shape[0] == 0 or binary_map.shape[1] == 0:
        raise ValueError("A binary map must be a non-empty two-dimensional array")
    if like is not None and binary_map.shape != like.shape[:2]:
        raise ValueError(f"Map shape {binary_map.shape} does not match image shape {like.shape[:2]}")
    return binary_map.astype(bool)


def extract_rb(img: np.ndarray) -> np.ndarray:
    """
    Convert an RGB image into its R−B channel rescaled to [0, 255].

    The signed difference R−B in [−255, 255] is mapped affinely through
    (R − B + 255) / 2 and rounded half away from zero.

    Args:
        img (np.ndarray): (H, W, 3) image with integer channels in [0, 255].

    Returns:
        np.ndarray: (H, W) uint8 raw image.
    """
    if img.ndim != 3 or img.shape[2] < 3:
        raise ValueError("The input 'image' must be an XxYxC RGB image - with three color channels (C).")
    if img.shape[0] == 0 or img.shape[1] == 0:
        raise ValueError("Image dimensions must be positive")

    r = img[..., 0].astype(np.int32)
    b = img[..., 2].astype(np.int32)
    # (n + 1) // 2 == round_half_away(n / 2) for n >= 0
    return ((r - b + 255 + 1) // 2).astype(np.uint8)


def _split_sizes(n: int) -> Tuple[int, int, int]:
    n_train = int(round_half_away(TRAIN_FRACTION * n))
    n_val = int(round_half_away(VAL_FRACTION * n))
    # keep all three splits non-empty on tiny datasets
    n_val = max(n_val, 1)
    n_train = max(min(n_train, n - n_val - 1), 1)
    return n_train, n_val, n - n_train - n_val


def split_dataset(n: int, seed: int) -> DatasetSplit:
    """
    Partition indices 0..n-1 into train/val/test with a seeded shuffle.

    Sizes follow round(0.60 n), round(0.1565 n) and the remainder
    (69/18/28 for the 115-image dataset). On tiny datasets this deliberately
    departs from the formula so that every split stays non-empty: validation
    gets at least one item and training gives one up to the test split, e.g.
    n=3 yields 1/1/1 where the formula would give 2/0/1.

    Raises:
        DataError: If n < 3 ("split impossible").
    """
    if n < 3:
        raise DataError(f"split impossible: need at least 3 items, got {n}")

    n_train, n_val, _ = _split_sizes(n)
    permutation = np.random.default_rng(seed).permutation(n)

    return DatasetSplit(
        train_ids=tuple(sorted(int(i) for i in permutation[:n_train])),
        val_ids=tuple(sorted(int(i) for i in permutation[n_train : n_train + n_val])),
        test_ids=tuple(sorted(int(i) for i in permutation[n_train + n_val :])),
        seed=seed,
    )


def _pnm_maxval(path):
    """Maximum sample value declared in a P2/P5 header, or None for other formats."""
    with open(path, "rb") as f:
        head = f.read(512)
    if head[:2] not in (b"P2", b"P5"):
        return None
    tokens = []
    for line in head[2:].splitlines():
        line = line.split(b"#", 1)[0]
        tokens += line.split()
        if len(tokens) >= 3:
            break
    if len(tokens) < 3:
        raise DataError(f"Malformed image file '{path}': truncated header")
    try:
        width, height, maxval = (int(t) for t in tokens[:3])
    except ValueError:
        raise DataError(f"Malformed image file '{path}': non-numeric header")
    if width == 0 or height == 0:
        raise DataError(f"Image '{path}' has a zero dimension")
    return maxval


def _open_single_channel(path) -> np.ndarray:
    check_file_exists(path)
    maxval = _pnm_maxval(path)
    if maxval is not None and maxval > 255:
        raise DataError(f"unsupported bit depth: '{path}' declares maxval {maxval}, expected 8-bit grayscale")
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode in _HIGH_DEPTH_MODES:
                raise DataError(f"unsupported bit depth: '{path}' has mode {mode}, expected 8-bit grayscale")
            if mode not in ("L", "1", "P"):
                raise DataError(f"'{path}' is not a single-channel image (mode {mode})")
            arr = np.array(im.convert("L"))
    except (UnidentifiedImageError, OSError, SyntaxError) as e:
        raise DataError(f"Malformed image file '{path}': {e}")

    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise DataError(f"Image '{path}' has a zero dimension")
    return arr.astype(np.uint8)


def load_image_file(path) -> np.ndarray:
    """Load an 8-bit single-channel image (binary PGM) as a raw image."""
    return _open_single_channel(path)


def save_image_file(img: np.ndarray, path) -> None:
    """Save a raw image as a binary 8-bit PGM."""
    img = check_raw_image(img)
    Image.fromarray(img).save(path, format="PPM")


def load_map_file(path) -> np.ndarray:
    """Load a binary map stored as an 8-bit image; values >= 128 are cloud."""
    return _open_single_channel(path) >= 128


def save_map_file(binary_map: np.ndarray, path) -> None:
    """Save a binary map as an 8-bit PGM with values {0, 255}."""
    binary_map = check_binary_map(binary_map)
    Image.fromarray(np.where(binary_map, 255, 0).astype(np.uint8)).save(path, format="PPM")


def downsample_image(img: np.ndarray, side: int) -> np.ndarray:
    """Box-downsample a raw image to side x side."""
    if img.shape == (side, side):
        return img
    return cv2.resize(img, (side, side), interpolation=cv2.INTER_AREA)


def downsample_map(binary_map: np.ndarray, side: int) -> np.ndarray:
    """Nearest-neighbour resample of a binary map to side x side."""
    if binary_map.shape == (side, side):
        return binary_map.astype(bool)
    _map = binary_map.astype(np.uint8) * 255
    return cv2.resize(_map, (side, side), interpolation=cv2.INTER_NEAREST) >= 128


def synth_image(side: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """One procedural cloud texture and its mean-threshold ground truth."""
    cells = int(rng.integers(3, 7))
    coarse = rng.random((cells, cells))
    field = zoom(coarse, side / cells, order=3, mode="nearest", grid_mode=True)[:side, :side]
    field = gaussian(field, sigma=side / 32, preserve_range=True)
    field = (field - field.min()) / max(field.max() - field.min(), 1e-12)
    img = round_half_away(field * 255).astype(np.uint8)
    return img, img > img.mean()


def synth_dataset(count: int, side: int, seed: int) -> List[Tuple[np.ndarray, np.ndarray]]:
    """
    Generate `count` (raw image, binary map) pairs of smoothed value-noise "clouds".

    The ground truth is the image thresholded at its own mean, so every pair is
    consistent by construction. Deterministic per seed.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if side < 8:
        raise ValueError("side must be >= 8")

    rng = np.random.default_rng(seed)
    return [synth_image(side, rng) for _ in range(count)]


def _list_images(directory: Path) -> List[Path]:
    return natsorted(
        [p for p in directory.iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS],
        key=lambda p: p.name,
    )


def load_swinseg(root, side: int) -> List[Tuple[np.ndarray, np.ndarray]]:
    """
    Load the SWINSEG dataset at the working resolution.

    Expects `<root>/images` with RGB images and `<root>/GTmaps` with the
    ground-truth maps; both are paired by natural sort order of file names.

    Args:
        root (str): Dataset directory.
        side (int): Working resolution in pixels.

    Returns:
        list: (raw image, binary map) pairs, R−B extracted and resized.
    """
    root = Path(root)
    images_dir, maps_dir = root / "images", root / "GTmaps"
    for d in (root, images_dir, maps_dir):
        if not d.is_dir():
            raise FileNotFoundError(f"The dataset directory '{d}' does not exist.")

    image_files, map_files = _list_images(images_dir), _list_images(maps_dir)
    if len(image_files) != len(map_files) or len(image_files) == 0:
        raise DataError(
            f"Found {len(image_files)} images and {len(map_files)} maps under '{root}'; they must pair one-to-one"
        )

    logging.info(f"Loading {len(image_files)} image/map pairs from {root}")
    pairs = []
    for image_file, map_file in zip(image_files, map_files):
        try:
            with Image.open(image_file) as im:
                rgb = np.array(im.convert("RGB"))
            with Image.open(map_file) as im:
                gt = np.array(im.convert("L")) >= 128
        except (UnidentifiedImageError, OSError) as e:
            raise DataError(f"Malformed dataset file: {e}")
        raw = extract_rb(rgb)
        check_binary_map(gt, like=raw)
        pairs.append((downsample_image(raw, side), downsample_map(gt, side)))

    return pairs


def write_dataset(pairs, split: DatasetSplit, outdir) -> pd.DataFrame:
    """
    Persist pairs as PGM files and write the (image_path, map_path, split) manifest.

    Paths in the manifest are relative to `outdir`.
    """
    outdir = Path(outdir)
    ensure_directory(outdir / "images")
    ensure_directory(outdir / "maps")

    records = []
    for i, (img, gt) in enumerate(pairs):
        image_path = os.path.join("images", f"{i:04d}.pgm")
        map_path = os.path.join("maps", f"{i:04d}.pgm")
        save_image_file(img, outdir / image_path)
        save_map_file(gt, outdir / map_path)
        records.append((image_path, map_path, split.split_of(i)))

    manifest = pd.DataFrame.from_records(records, columns=MANIFEST_COLUMNS)
    write_manifest(manifest, outdir / "manifest.csv")
    return manifest


def write_manifest(manifest: pd.DataFrame, path) -> None:
    manifest[MANIFEST_COLUMNS].to_csv(path, index=False)


def read_manifest(path) -> pd.DataFrame:
    """
    Read a dataset manifest.

    Raises:
        DataError: If the header or the split labels are malformed.
    """
    check_file_exists(path)
    try:
        manifest = pd.read_csv(path, dtype=str, keep_default_na=False)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataError(f"Malformed manifest '{path}': {e}")

    if list(manifest.columns[:3]) != MANIFEST_COLUMNS:
        raise DataError(f"Malformed manifest '{path}': expected columns {MANIFEST_COLUMNS}")
    bad = set(manifest["split"]) - set(SPLITS)
    if bad:
        raise DataError(f"Malformed manifest '{path}': unknown split labels {sorted(bad)}")
    return manifest


def load_split_pairs(manifest_path, split: str) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Load the (image, map) pairs of one split; manifest paths are relative to its directory."""
    manifest = read_manifest(manifest_path)
    base = Path(manifest_path).parent
    rows = manifest[manifest["split"] == split]
    pairs = []
    for image_path, map_path in zip(rows["image_path"], rows["map_path"]):
        img = load_image_file(base / image_path)
        gt = load_map_file(base / map_path)
        check_binary_map(gt, like=img)
        pairs.append((img, gt))
    return pairs


def split_from_manifest(manifest: pd.DataFrame, seed: int = -1) -> DatasetSplit:
    """Build a DatasetSplit from the split column of an explicit manifest."""
    ids = {name: tuple(int(i) for i in manifest.index[manifest["split"] == name]) for name in SPLITS}
    return DatasetSplit(ids["train"], ids["val"], ids["test"], seed)


def prepare(config, outdir):
    """
    Build the working dataset: load (or synthesize) pairs at the working side,
    split them and write images, maps and `data/manifest.csv` under `outdir`.
    """
    if config.dataset == "synthetic":
        logging.info(f"Generating {config.synthetic_count} synthetic pairs at {config.side}x{config.side}")
        pairs = synth_dataset(config.synthetic_count, config.side, config.synthetic_seed)
    else:
        pairs = load_swinseg(config.dataset, config.side)

    if config.manifest:
        explicit = read_manifest(config.manifest)
        if len(explicit) != len(pairs):
            raise DataError(
                f"Manifest '{config.manifest}' lists {len(explicit)} items but the dataset has {len(pairs)}"
            )
        split = split_from_manifest(explicit.reset_index(drop=True))
        logging.info(f"Using the explicit split from {config.manifest}")
    else:
        split = split_dataset(len(pairs), config.split_seed)

    logging.info("Split sizes (train, val, test): {}".format(split.sizes()))
    write_dataset(pairs, split, Path(outdir) / "data")


def _run_prepare(args):
    from skyaug.utils.stages import config_from_args, run_stage

    config = config_from_args(args)
    if config.dataset != "synthetic" and not os.path.isdir(config.dataset):
        raise FileNotFoundError(f"The dataset directory '{config.dataset}' does not exist.")
    run_stage(config, "prepare", prepare, force=args.force)


if __name__ == "__main__":
    from skyaug.cli import get_prepare_parser
    args = get_prepare_parser().parse_args()
    _run_prepare(args)
