"""
Geometric 16-fold augmentation and the [-1, 1] normalization used around GAN training.

The 16 transforms are every (rotation, flip) combination: rotation is
counter-clockwise and applied first, then the flip. Since a flip in both
directions equals a 180° rotation, the 16 transforms realize each of the 8
dihedral symmetries of the square exactly twice.
"""
from dataclasses import dataclass
from itertools import product
from typing import List, Tuple

import numpy as np

from skyaug.preprocessing.imageio import check_raw_image, round_half_away

ROTATIONS = (0, 90, 180, 270)
FLIPS = ("none", "horizontal", "vertical", "both")


@dataclass(frozen=True)
class TransformId:
    rotation: int = 0
    flip: str = "none"

    def __post_init__(self):
        if self.rotation not in ROTATIONS:
            raise ValueError(f"rotation must be one of {ROTATIONS}, got {self.rotation}")
        if self.flip not in FLIPS:
            raise ValueError(f"flip must be one of {FLIPS}, got {self.flip}")


# rotations major, flips minor
TRANSFORMS: Tuple[TransformId, ...] = tuple(TransformId(r, f) for r, f in product(ROTATIONS, FLIPS))


def apply_transform(img: np.ndarray, t: TransformId) -> np.ndarray:
    """
    Rotate (counter-clockwise) then flip an image or a binary map.

    The result is an exact pixel permutation of the input; 90° and 270°
    rotations swap width and height.
    """
    _img = np.rot90(img, k=t.rotation // 90)
    if t.flip in ("horizontal", "both"):
        _img = _img[:, ::-1]
    if t.flip in ("vertical", "both"):
        _img = _img[::-1, :]
    return np.ascontiguousarray(_img)


def _group_element(t: TransformId) -> bytes:
    probe = np.arange(6).reshape(2, 3)
    return apply_transform(probe, t).tobytes() + bytes(apply_transform(probe, t).shape)


def distinct_transforms() -> List[TransformId]:
    """The first transform (in TRANSFORMS order) for each of the 8 dihedral symmetries."""
    seen, distinct = set(), []
    for t in TRANSFORMS:
        key = _group_element(t)
        if key not in seen:
            seen.add(key)
            distinct.append(t)
    return distinct


def sixteen_fold(img: np.ndarray, dedupe: bool = False) -> List[np.ndarray]:
    """
    All 16 rotation/flip variants of an image, in TRANSFORMS order.

    Args:
        img (np.ndarray): Raw image or binary map.
        dedupe (bool): If True, keep only the 8 distinct symmetries.
    """
    transforms = distinct_transforms() if dedupe else TRANSFORMS
    return [apply_transform(img, t) for t in transforms]


def augment_dataset(pairs, dedupe: bool = False) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Apply sixteen_fold to aligned (image, map) pairs; the k-th map stays the k-th image's ground truth."""
    augmented = []
    for img, gt in pairs:
        augmented += list(zip(sixteen_fold(img, dedupe), sixteen_fold(gt, dedupe)))
    return augmented


def normalize(img: np.ndarray) -> np.ndarray:
    """Map [0, 255] intensities onto [-1, 1]: pixel / 127.5 - 1."""
    img = check_raw_image(img)
    return img.astype(np.float64) / 127.5 - 1.0


def denormalize(img: np.ndarray) -> np.ndarray:
    """
    Map [-1, 1] values back onto [0, 255].

    Values are clamped to [-1, 1] first and rounded half away from zero.
    """
    _img = np.clip(np.asarray(img, dtype=np.float64), -1.0, 1.0)
    return round_half_away(_img * 127.5 + 127.5).astype(np.uint8)
