"""Synthetic datasets with known ground truth.

`generate_shape_dataset` draws one class-specific shape outline per image
over an iid Gaussian-noise background, so backgrounds are statistically
identical across classes. `inject_class_correlated_background` then adds
a faint, fixed per-class pattern to background pixels only, reproducing
the kind of acquisition artifact a bias audit must detect. Foreground
masks are stored alongside images so "background only" is well defined.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .errors import SynthError
from .imgio import LabeledDataset

SHAPE_FAMILIES = ("circle", "square", "triangle", "ring", "diag", "cross")


@dataclass(frozen=True)
class SynthSpec:
    num_classes: int = 5
    samples_per_class: int = 40
    image_size: int = 64
    background_mean: float = 0.5
    background_std: float = 0.05
    foreground_contrast: float = 0.7
    stroke_width: float = 1.5
    position_jitter: float = 0.02   # center offset range, fraction of size
    radius_min: float = 0.11        # shape radius range, fraction of size
    radius_max: float = 0.14
    shapes: tuple | None = None
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise SynthError("need at least 2 classes")
        if self.samples_per_class < 1:
            raise SynthError("need at least 1 sample per class")
        if self.image_size < 32:
            raise SynthError(f"image_size must be >= 32, got {self.image_size}")
        if not (0.0 < self.radius_min <= self.radius_max < 0.5):
            raise SynthError("need 0 < radius_min <= radius_max < 0.5")
        if self.position_jitter < 0:
            raise SynthError("position_jitter must be >= 0")
        reach = (0.5 + self.position_jitter + self.radius_max) \
            * self.image_size + self.stroke_width
        if reach >= self.image_size:
            raise SynthError("shapes would not fit inside the frame")
        shapes = self.shapes or SHAPE_FAMILIES[:self.num_classes]
        if len(shapes) != self.num_classes:
            raise SynthError("one shape family per class required")
        unknown = set(shapes) - set(SHAPE_FAMILIES)
        if unknown:
            raise SynthError(f"unknown shape families: {sorted(unknown)}")
        object.__setattr__(self, "shapes", tuple(shapes))


@dataclass(frozen=True)
class BiasSpec:
    amplitude: float = 0.04
    pattern_kind: str = "fixed-high-frequency"
    granularity: int = 4    # side of the constant-sign cells, in pixels
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.amplitude <= 0.1):
            raise SynthError(
                f"bias amplitude must lie in [0, 0.1], got {self.amplitude}")
        if self.pattern_kind not in ("fixed-high-frequency", "corner-offset"):
            raise SynthError(f"unknown pattern kind {self.pattern_kind!r}")
        if self.granularity < 1:
            raise SynthError("granularity must be >= 1 pixel")


def _draw_shape(name: str, size: int, cy: float, cx: float, radius: float,
                stroke: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dy = yy - cy
    dx = xx - cx
    if name == "circle":
        dist = np.hypot(dy, dx)
        return np.abs(dist - radius) <= stroke
    if name == "ring":
        dist = np.hypot(dy, dx)
        return (np.abs(dist - radius) <= stroke) \
            | (np.abs(dist - radius * 0.55) <= stroke)
    if name == "square":
        cheb = np.maximum(np.abs(dy), np.abs(dx))
        return np.abs(cheb - radius) <= stroke
    if name == "cross":
        inside = np.maximum(np.abs(dy), np.abs(dx)) <= radius
        return inside & ((np.abs(dy) <= stroke) | (np.abs(dx) <= stroke))
    if name == "diag":
        inside = np.maximum(np.abs(dy), np.abs(dx)) <= radius
        diag = np.abs(dy - dx) <= stroke * np.sqrt(2.0)
        anti = np.abs(dy + dx) <= stroke * np.sqrt(2.0)
        return inside & (diag | anti)
    if name == "triangle":
        # outline of an upright isoceles triangle inscribed in the radius
        top = np.array([cy - radius, cx])
        left = np.array([cy + radius, cx - radius])
        right = np.array([cy + radius, cx + radius])
        mask = np.zeros((size, size), dtype=bool)
        for a, b in ((top, left), (top, right), (left, right)):
            mask |= _segment_band(yy, xx, a, b, stroke)
        return mask
    raise SynthError(f"unknown shape {name!r}")


def _segment_band(yy, xx, a, b, stroke):
    ab = b - a
    length2 = float(ab @ ab)
    t = ((yy - a[0]) * ab[0] + (xx - a[1]) * ab[1]) / length2
    t = np.clip(t, 0.0, 1.0)
    py = a[0] + t * ab[0]
    px = a[1] + t * ab[1]
    return np.hypot(yy - py, xx - px) <= stroke


def generate_shape_dataset(spec: SynthSpec) -> LabeledDataset:
    """One shape outline per image over clipped Gaussian noise.

    Shapes sit near the center with jittered position and scale, keeping
    the image borders and corners free of foreground so corner crops are
    genuinely blank. Deterministic per item in (seed, class, index).
    """
    s = spec.image_size
    images, labels, paths, masks = [], [], [], []
    for c, shape in enumerate(spec.shapes):
        for i in range(spec.samples_per_class):
            rng = np.random.default_rng([spec.seed, c, i])
            bg = rng.normal(spec.background_mean, spec.background_std,
                            size=(s, s))
            radius = rng.uniform(spec.radius_min, spec.radius_max) * s
            jitter = spec.position_jitter
            cy = s / 2.0 + rng.uniform(-jitter, jitter) * s
            cx = s / 2.0 + rng.uniform(-jitter, jitter) * s
            mask = _draw_shape(shape, s, cy, cx, radius,
                               float(spec.stroke_width) / 2.0)
            img = bg + spec.foreground_contrast * mask
            img = np.clip(img, 0.0, 1.0)[:, :, None]
            images.append(img)
            labels.append(c)
            paths.append(f"{shape}/{shape}_{i:03d}.png")
            masks.append(mask)
    meta = {"synth_spec": asdict(spec)}
    return LabeledDataset(images=images, labels=labels,
                          class_names=list(spec.shapes), paths=paths,
                          masks=masks, meta=meta)


def class_bias_pattern(bias: BiasSpec, class_idx: int, size: int,
                       num_classes: int) -> np.ndarray:
    """The fixed per-class background perturbation, max |value| = amplitude."""
    if bias.pattern_kind == "fixed-high-frequency":
        # full-amplitude pseudo-random sign field, constant over small
        # square cells so the pattern survives smoothing and decimation
        rng = np.random.default_rng([bias.seed, class_idx])
        g = bias.granularity
        cells = -(-size // g)
        field = np.sign(rng.normal(size=(cells, cells)))
        field[field == 0.0] = 1.0
        return bias.amplitude * field.repeat(g, axis=0).repeat(g, axis=1)[
            :size, :size]
    # corner-offset: a constant plateau in a class-dependent corner
    pattern = np.zeros((size, size))
    block = max(size // 3, 1)
    level = bias.amplitude * (class_idx + 1) / num_classes
    corner = class_idx % 4
    rows = slice(0, block) if corner in (0, 1) else slice(size - block, size)
    cols = slice(0, block) if corner in (0, 2) else slice(size - block, size)
    pattern[rows, cols] = level
    return pattern


def inject_class_correlated_background(ds: LabeledDataset,
                                       bias: BiasSpec) -> LabeledDataset:
    """Add the per-class pattern to background pixels only.

    Foreground pixels stay bit-identical; every per-pixel change is at
    most the bias amplitude; results are clipped to [0, 1]. Injecting
    twice is forbidden (marked in the dataset metadata).
    """
    if ds.masks is None:
        raise SynthError("dataset lacks foreground masks; cannot scope the "
                         "bias to background pixels")
    if ds.meta.get("bias_injected"):
        raise SynthError("bias was already injected into this dataset")
    k = ds.num_classes
    size = ds.images[0].shape[0]
    patterns = [class_bias_pattern(bias, c, size, k) for c in range(k)]
    images = []
    for img, lab, mask in zip(ds.images, ds.labels, ds.masks):
        background = ~mask
        delta = patterns[lab] * background
        out = np.clip(img + delta[:, :, None], 0.0, 1.0)
        out[mask] = img[mask]  # keep foreground bit-identical despite clipping
        images.append(out)
    meta = dict(ds.meta)
    meta["bias_injected"] = True
    meta["bias_spec"] = asdict(bias)
    return LabeledDataset(images=images, labels=list(ds.labels),
                          class_names=list(ds.class_names),
                          paths=list(ds.paths),
                          masks=[m.copy() for m in ds.masks], meta=meta)
