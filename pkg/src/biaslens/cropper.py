"""Fixed-size corner patches from every image, used to build crop-probe
datasets of seemingly blank background."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import CropError
from .imgio import LabeledDataset, validate_image


class Corner(str, Enum):
    TOP_LEFT = "tl"
    TOP_RIGHT = "tr"
    BOTTOM_LEFT = "bl"
    BOTTOM_RIGHT = "br"


@dataclass(frozen=True)
class CropSpec:
    corner: Corner = Corner.TOP_LEFT
    size: int = 20

    def __post_init__(self):
        if self.size < 1:
            raise CropError(f"crop size must be >= 1, got {self.size}")
        object.__setattr__(self, "corner", Corner(self.corner))


def _corner_slices(h: int, w: int, spec: CropSpec):
    s = spec.size
    rows = slice(0, s) if spec.corner in (Corner.TOP_LEFT, Corner.TOP_RIGHT) \
        else slice(h - s, h)
    cols = slice(0, s) if spec.corner in (Corner.TOP_LEFT, Corner.BOTTOM_LEFT) \
        else slice(w - s, w)
    return rows, cols


def crop_corner(img: np.ndarray, spec: CropSpec) -> np.ndarray:
    """Copy the size x size corner patch; pixel values are untouched."""
    validate_image(img)
    h, w = img.shape[:2]
    if spec.size > min(h, w):
        raise CropError(f"crop size {spec.size} exceeds image {h}x{w}")
    rows, cols = _corner_slices(h, w, spec)
    return img[rows, cols].copy()


def crop_dataset(ds: LabeledDataset, spec: CropSpec) -> LabeledDataset:
    """Crop every image; labels and class names are preserved.

    Every undersized image is reported by path before failing.
    """
    too_small = [ds.paths[i] for i, img in enumerate(ds.images)
                 if spec.size > min(img.shape[:2])]
    if too_small:
        raise CropError(
            f"crop size {spec.size} exceeds {len(too_small)} image(s): "
            + ", ".join(too_small))
    images = [crop_corner(img, spec) for img in ds.images]
    masks = None
    if ds.masks is not None:
        masks = [crop_corner(m[:, :, None], spec)[:, :, 0]
                 for m in ds.masks]
    return LabeledDataset(images=images, labels=list(ds.labels),
                          class_names=list(ds.class_names),
                          paths=list(ds.paths), masks=masks,
                          meta=dict(ds.meta))
