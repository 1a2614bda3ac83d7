"""Dataset ingestion, pixel normalization, resizing, and deterministic splits.

Datasets live on disk as one subdirectory per class, each holding 8-bit
PNG images (other Pillow-decodable formats are converted at ingestion).
In memory an image is an H x W x C float64 array in [0, 1], channel-last,
with C in {1, 3}.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DatasetError


class Partition(str, Enum):
    TRAIN = "TRAIN"
    VAL = "VAL"
    TEST = "TEST"


def validate_image(arr: np.ndarray) -> np.ndarray:
    """Check the H x W x C layout and finiteness of an image array."""
    if not isinstance(arr, np.ndarray) or arr.ndim != 3:
        raise DatasetError(f"expected an HxWxC array, got {type(arr)} with "
                           f"shape {getattr(arr, 'shape', None)}")
    if arr.shape[2] not in (1, 3):
        raise DatasetError(f"channel count must be 1 or 3, got {arr.shape[2]}")
    if not np.all(np.isfinite(arr)):
        raise DatasetError("image contains non-finite values")
    return arr


@dataclass
class LabeledDataset:
    """A class-labeled image collection.

    images : list of H x W x C float64 arrays in [0, 1]
    labels : class index per image, aligned with `images`
    class_names : ordered class names; labels index into this list
    paths : relative path per image (used for split serialization)
    masks : optional boolean foreground masks (synthetic datasets only)
    meta : free-form provenance (e.g. synthesis and bias parameters)
    """

    images: list
    labels: list
    class_names: list
    paths: list
    masks: list | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.images)
        if not (len(self.labels) == len(self.paths) == n):
            raise DatasetError("images, labels, and paths must align")
        if self.masks is not None and len(self.masks) != n:
            raise DatasetError("masks must align with images")
        k = len(self.class_names)
        if k < 2:
            raise DatasetError(f"need at least 2 classes, got {k}")
        counts = self.class_counts()
        for c, cnt in enumerate(counts):
            if cnt < 1:
                raise DatasetError(f"class {self.class_names[c]!r} has no items")
        for lab in self.labels:
            if not (0 <= lab < k):
                raise DatasetError(f"label {lab} out of range for {k} classes")

    def __len__(self):
        return len(self.images)

    @property
    def num_classes(self):
        return len(self.class_names)

    def class_counts(self):
        counts = [0] * len(self.class_names)
        for lab in self.labels:
            if 0 <= lab < len(counts):
                counts[lab] += 1
        return counts


@dataclass
class SplitManifest:
    """Deterministic train/val/test assignment for one dataset."""

    seed: int
    fractions: tuple
    assignment: dict  # item index -> Partition

    def indices(self, part: Partition) -> list:
        return [i for i in sorted(self.assignment) if self.assignment[i] is part
                or self.assignment[i] == part]

    def to_json_dict(self, ds: LabeledDataset) -> dict:
        return {
            "seed": int(self.seed),
            "fractions": [float(f) for f in self.fractions],
            "assignment": {ds.paths[i]: self.assignment[i].value
                           for i in sorted(self.assignment)},
        }

    @classmethod
    def from_json_dict(cls, d: dict, ds: LabeledDataset) -> "SplitManifest":
        by_path = {p: i for i, p in enumerate(ds.paths)}
        assignment = {}
        for path, part in d["assignment"].items():
            if path not in by_path:
                raise DatasetError(f"manifest path {path!r} not in dataset")
            assignment[by_path[path]] = Partition(part)
        return cls(seed=int(d["seed"]),
                   fractions=tuple(float(f) for f in d["fractions"]),
                   assignment=assignment)


def _decode_image(path: Path, channels: int | None) -> np.ndarray:
    try:
        with Image.open(path) as im:
            if channels == 1:
                im = im.convert("L")
            elif channels == 3:
                im = im.convert("RGB")
            elif im.mode in ("L", "1", "I", "I;16"):
                im = im.convert("L")
            else:
                im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.float64) / 255.0
    except (OSError, ValueError) as exc:
        raise DatasetError(f"cannot decode image {path}: {exc}") from exc
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr


def load_dataset(root, channels: int | None = None) -> LabeledDataset:
    """Load a `<root>/<class_name>/<image>.png` tree into memory.

    Class names are the subdirectory names in lexicographic order.
    Pixel values are mapped from [0, 255] to [0, 1]. Directories whose
    name starts with an underscore (e.g. `_masks`) are skipped.
    """
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} is not a readable directory")
    class_dirs = sorted(d for d in root.iterdir()
                        if d.is_dir() and not d.name.startswith("_"))
    if len(class_dirs) < 2:
        raise DatasetError(f"{root} holds {len(class_dirs)} class directories; "
                           "need at least 2")
    images, labels, paths = [], [], []
    first_channels = channels
    for ci, cdir in enumerate(class_dirs):
        files = sorted(p for p in cdir.iterdir() if p.is_file())
        for p in files:
            arr = _decode_image(p, first_channels)
            if first_channels is None:
                first_channels = arr.shape[2]
            validate_image(arr)
            images.append(arr)
            labels.append(ci)
            paths.append(f"{cdir.name}/{p.name}")
    return LabeledDataset(images=images, labels=labels,
                          class_names=[d.name for d in class_dirs],
                          paths=paths)


def save_dataset(ds: LabeledDataset, root, force: bool = False) -> None:
    """Write a dataset back to disk as an 8-bit PNG class tree.

    Foreground masks, when present, go to `<root>/_masks/<class>/<name>`.
    """
    root = Path(root)
    if root.exists() and any(root.iterdir()) and not force:
        raise DatasetError(f"output directory {root} is not empty "
                           "(pass force=True to write anyway)")
    root.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(ds.images):
        out = root / ds.paths[i]
        out.parent.mkdir(parents=True, exist_ok=True)
        _write_png(img, out)
        if ds.masks is not None:
            mpath = root / "_masks" / ds.paths[i]
            mpath.parent.mkdir(parents=True, exist_ok=True)
            _write_png(ds.masks[i].astype(np.float64)[:, :, None], mpath)
    if ds.meta:
        (root / "synth.json").write_text(json.dumps(ds.meta, indent=2,
                                                    sort_keys=True))


def _write_png(img: np.ndarray, path: Path) -> None:
    arr = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    if arr.shape[2] == 1:
        Image.fromarray(arr[:, :, 0], mode="L").save(path, format="PNG")
    else:
        Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def validate_fractions(fractions) -> tuple:
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise DatasetError(f"fractions must be 3 non-negative reals, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise DatasetError(f"fractions must sum to 1.0, got {sum(fractions)!r}")
    return fractions


def split_dataset(ds: LabeledDataset, fractions, seed: int) -> SplitManifest:
    """Per-class stratified split driven solely by `seed`.

    VAL and TEST sizes are floored per class; the remainder goes to
    TRAIN, so every class is guaranteed at least one training item.
    """
    fractions = validate_fractions(fractions)
    _, f_val, f_test = fractions
    rng = np.random.default_rng(seed)
    labels = np.asarray(ds.labels)
    assignment = {}
    for c in range(ds.num_classes):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(len(idx))]
        n = len(idx)
        n_val = math.floor(f_val * n)
        n_test = math.floor(f_test * n)
        n_train = n - n_val - n_test
        if n_train < 1:
            raise DatasetError(
                f"class {ds.class_names[c]!r} has {n} items; fractions "
                f"{fractions} leave no training item")
        for i in idx[:n_train]:
            assignment[int(i)] = Partition.TRAIN
        for i in idx[n_train:n_train + n_val]:
            assignment[int(i)] = Partition.VAL
        for i in idx[n_train + n_val:]:
            assignment[int(i)] = Partition.TEST
    return SplitManifest(seed=int(seed), fractions=fractions,
                         assignment=assignment)


def _axis_coords(n_in: int, n_out: int) -> np.ndarray:
    # Corner-aligned sampling: output corners map onto input corners.
    if n_out == 1:
        return np.zeros(1)
    return np.arange(n_out) * ((n_in - 1) / (n_out - 1))


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with corner-aligned sampling.

    Output values are convex combinations of input values, so the input
    min/max bounds are preserved.
    """
    validate_image(img)
    if out_h < 1 or out_w < 1:
        raise DatasetError(f"output size must be >= 1, got {out_h}x{out_w}")
    h, w = img.shape[:2]
    ys = _axis_coords(h, out_h)
    xs = _axis_coords(w, out_w)
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bot = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def partition_items(ds: LabeledDataset, manifest: SplitManifest,
                    part: Partition):
    """Images and labels of one partition, in stable index order."""
    idx = manifest.indices(part)
    images = [ds.images[i] for i in idx]
    labels = np.asarray([ds.labels[i] for i in idx], dtype=np.int64)
    return images, labels
