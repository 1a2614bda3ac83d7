"""Audit orchestration: the transform audit, the background-crop probe,
the exact binomial chance threshold, and the bias decision rule.

The decision rule: a transformed condition indicates bias when its test
accuracy is similar to (within a tolerance, inclusive) or higher than the
accuracy on the original images. Fourier conditions are reported but
excluded from the rule by default, since they depress accuracy across
both biased and unbiased data and therefore do not separate the two.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict, field
from fractions import Fraction

import numpy as np

from . import __version__
from .errors import BiasLensError, CropError
from .cnn import (Model, ModelConfig, TrainConfig, init_model, train_model,
                  predict_batch)
from .cropper import CropSpec, crop_dataset
from .imgio import (LabeledDataset, Partition, SplitManifest, partition_items,
                    resize_bilinear, split_dataset)
from .metrics import EvalMetrics, classification_metrics, confusion_matrix
from .transforms import (Identity, TransformSpec, apply_transform,
                         contains_fourier, format_transform, validate_spec)

BIAS_INDICATED = "BIAS_INDICATED"
NO_INDICATION = "NO_INDICATION"
EXCLUDED_FROM_RULE = "EXCLUDED_FROM_RULE"

_FLOAT_SLACK = 1e-12  # inclusive boundary under float accumulation


@dataclass
class AuditCondition:
    name: str
    transform: TransformSpec
    accuracy: float
    metrics: EvalMetrics | None = None
    delta_pp: float | None = None
    flag: str | None = None
    history: list = field(default_factory=list)

    def to_json_dict(self) -> dict:
        d = {
            "name": self.name,
            "transform": format_transform(self.transform),
            "accuracy": self.accuracy,
            "delta_pp": self.delta_pp,
            "flag": self.flag,
        }
        if self.metrics is not None:
            d.update(self.metrics.to_json_dict())
        return d


@dataclass
class CropProbeResult:
    status: str                 # "OK" | "SKIPPED"
    accuracy: float | None
    chance: float
    threshold: float
    confidence: float
    n_test: int
    flag: str | None
    metrics: EvalMetrics | None = None
    message: str = ""

    def to_json_dict(self) -> dict:
        d = {
            "status": self.status,
            "accuracy": self.accuracy,
            "chance": self.chance,
            "threshold": self.threshold,
            "confidence": self.confidence,
            "n_test": self.n_test,
            "flag": self.flag,
            "message": self.message,
        }
        if self.metrics is not None:
            d["metrics"] = self.metrics.to_json_dict()
        return d


@dataclass
class AuditReport:
    dataset_id: str
    split: dict
    conditions: list
    crop_probe: CropProbeResult | None
    config: dict
    version: str = __version__
    timestamp: str = ""

    def to_json_dict(self) -> dict:
        return {
            "dataset": self.dataset_id,
            "split": self.split,
            "conditions": [c.to_json_dict() for c in self.conditions],
            "crop_probe": (self.crop_probe.to_json_dict()
                           if self.crop_probe is not None else None),
            "config": self.config,
            "version": self.version,
            "timestamp": self.timestamp,
        }


# ---------------------------------------------------------------------------
# Chance threshold


def _exact_threshold_count(n: int, k_classes: int, alpha: Fraction) -> int | None:
    """Smallest k with P[Binomial(n, 1/K) >= k] <= alpha, by integer
    tail summation over numerators with denominator K^n."""
    q = k_classes - 1
    bound = alpha * k_classes ** n
    tail = 0
    best = None
    # walk k from n downward, accumulating the exact tail
    for k in range(n, -1, -1):
        tail += math.comb(n, k) * q ** (n - k)
        if Fraction(tail) <= bound:
            best = k
        else:
            break
    return best


def _float_threshold_count(n: int, k_classes: int, alpha: float) -> int | None:
    p = 1.0 / k_classes
    log_p = math.log(p)
    log_q = math.log1p(-p)
    # cdf(k-1) built upward in float; the tail at the threshold is ~alpha,
    # far from the cancellation regime
    cdf = 0.0
    best = None
    for k in range(0, n + 1):
        tail = 1.0 - cdf
        if tail <= alpha:
            best = k
            break
        log_pmf = (math.lgamma(n + 1) - math.lgamma(k + 1)
                   - math.lgamma(n - k + 1) + k * log_p + (n - k) * log_q)
        cdf += math.exp(log_pmf)
    return best


def chance_threshold(n_test: int, num_classes: int, confidence: float) -> float:
    """Smallest accuracy a with P[Binomial(n_test, 1/K) >= a*n_test]
    <= 1 - confidence; 1.0 when no achievable accuracy qualifies."""
    if n_test < 1:
        raise BiasLensError(f"n_test must be >= 1, got {n_test}")
    if num_classes < 2:
        raise BiasLensError(f"need K >= 2, got {num_classes}")
    if not (0.5 <= confidence < 1.0):
        raise BiasLensError(f"confidence must lie in [0.5, 1), got {confidence}")
    if n_test <= 2000:
        alpha = Fraction(1) - Fraction(confidence)
        best = _exact_threshold_count(n_test, num_classes, alpha)
    else:
        best = _float_threshold_count(n_test, num_classes, 1.0 - confidence)
    if best is None:
        return 1.0
    return best / n_test


# ---------------------------------------------------------------------------
# Decision rule


def decide_bias_flags(conditions: list, tolerance_pp: float = 2.0,
                      include_fourier: bool = False) -> list:
    """Assign flags in place: BIAS_INDICATED iff accuracy is at least the
    original accuracy minus the tolerance (inclusive boundary). The
    Identity condition anchors the rule and Fourier conditions are
    excluded unless `include_fourier` is set."""
    identities = [c for c in conditions if isinstance(c.transform, Identity)]
    if len(identities) != 1:
        raise BiasLensError(
            f"audit needs exactly one Identity condition, found {len(identities)}")
    original = identities[0].accuracy
    tol = tolerance_pp / 100.0
    for cond in conditions:
        cond.delta_pp = (cond.accuracy - original) * 100.0
        if isinstance(cond.transform, Identity):
            cond.flag = EXCLUDED_FROM_RULE
        elif contains_fourier(cond.transform) and not include_fourier:
            cond.flag = EXCLUDED_FROM_RULE
        elif cond.accuracy >= original - tol - _FLOAT_SLACK:
            cond.flag = BIAS_INDICATED
        else:
            cond.flag = NO_INDICATION
    return conditions


# ---------------------------------------------------------------------------
# Condition training


def _prepare_arrays(images, labels, spec: TransformSpec, mc: ModelConfig):
    """Transform full-size images, then resize to the network input."""
    out = []
    for img in images:
        t = apply_transform(spec, img)
        if t.shape[:2] != (mc.input_h, mc.input_w):
            t = resize_bilinear(t, mc.input_h, mc.input_w)
        if t.shape[2] != mc.input_c:
            raise BiasLensError(
                f"dataset has {t.shape[2]} channel(s) but the model expects "
                f"{mc.input_c}")
        out.append(t)
    return np.stack(out), np.asarray(labels, dtype=np.int64)


def _train_condition(ds: LabeledDataset, manifest: SplitManifest,
                     spec: TransformSpec, mc: ModelConfig, tc: TrainConfig,
                     model_seed: int):
    """Train a fresh model on one transformed view of the dataset and
    evaluate it on the shared test partition."""
    train = _prepare_arrays(*partition_items(ds, manifest, Partition.TRAIN),
                            spec=spec, mc=mc)
    val_imgs, val_labels = partition_items(ds, manifest, Partition.VAL)
    val = _prepare_arrays(val_imgs, val_labels, spec=spec, mc=mc) \
        if len(val_labels) else None
    test = _prepare_arrays(*partition_items(ds, manifest, Partition.TEST),
                           spec=spec, mc=mc)
    model = init_model(mc, model_seed)
    model, history = train_model(model, train, val, tc)
    preds = []
    for i in range(0, len(test[1]), 64):
        preds.extend(predict_batch(model, test[0][i:i + 64]).tolist())
    confusion = confusion_matrix(preds, test[1], mc.num_classes)
    metrics = classification_metrics(confusion)
    return model, metrics, history


def run_transform_audit(ds: LabeledDataset, transforms: list,
                        mc: ModelConfig, tc: TrainConfig,
                        tolerance_pp: float = 2.0,
                        data_seed: int = 0,
                        fractions=(0.70, 0.15, 0.15),
                        model_seed: int = 0,
                        confidence: float = 0.99,
                        include_fourier: bool = False,
                        crop: CropSpec | None = None,
                        dataset_id: str = "dataset",
                        jobs: int = 1) -> AuditReport:
    """Run the full transform audit over one shared split.

    Conditions are Identity first, then each requested transform; every
    condition trains a fresh model from the same initialization seed.
    When `crop` is given the background-crop probe is run as well.
    """
    if not transforms:
        raise BiasLensError("transform list must be nonempty")
    for t in transforms:
        validate_spec(t)
    mc = _fit_config_channels(mc, ds)
    manifest = split_dataset(ds, fractions, data_seed)
    _require_test_items(manifest)
    specs = [Identity()] + list(transforms)
    names = ["original"] + [format_transform(t) for t in transforms]

    def build(spec):
        _, metrics, history = _train_condition(ds, manifest, spec, mc, tc,
                                               model_seed)
        return metrics, history

    results = _map_jobs(build, specs, jobs)
    conditions = [
        AuditCondition(name=name, transform=spec, accuracy=metrics.accuracy,
                       metrics=metrics, history=history)
        for name, spec, (metrics, history) in zip(names, specs, results)
    ]
    decide_bias_flags(conditions, tolerance_pp, include_fourier)

    probe = None
    if crop is not None:
        probe = run_crop_probe(ds, crop, mc, tc, confidence=confidence,
                               data_seed=data_seed, fractions=fractions,
                               model_seed=model_seed)
    config = {
        "model": asdict(mc),
        "train": asdict(tc),
        "transforms": [format_transform(t) for t in transforms],
        "tolerance_pp": tolerance_pp,
        "confidence": confidence,
        "data_seed": int(data_seed),
        "model_seed": int(model_seed),
        "fractions": [float(f) for f in fractions],
        "include_fourier_in_rule": include_fourier,
        "crop": ({"corner": crop.corner.value, "size": crop.size}
                 if crop is not None else None),
    }
    return AuditReport(dataset_id=dataset_id,
                       split=manifest.to_json_dict(ds),
                       conditions=conditions, crop_probe=probe, config=config)


def _require_test_items(manifest: SplitManifest):
    if not manifest.indices(Partition.TEST):
        raise BiasLensError(
            "test partition is empty; enlarge the dataset or raise the "
            "test fraction")


def _map_jobs(fn, items, jobs):
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    from concurrent.futures import ThreadPoolExecutor
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _fit_config_channels(mc: ModelConfig, ds: LabeledDataset) -> ModelConfig:
    chans = ds.images[0].shape[2]
    if mc.input_c != chans or mc.num_classes != ds.num_classes:
        mc = ModelConfig(input_h=mc.input_h, input_w=mc.input_w,
                         input_c=chans, blocks=mc.blocks,
                         dense_widths=mc.dense_widths,
                         num_classes=ds.num_classes)
    return mc


def run_crop_probe(ds: LabeledDataset, crop: CropSpec, mc: ModelConfig,
                   tc: TrainConfig, confidence: float = 0.99,
                   data_seed: int = 0, fractions=(0.70, 0.15, 0.15),
                   model_seed: int = 0) -> CropProbeResult:
    """Train and evaluate on corner crops alone; flag bias when test
    accuracy exceeds the exact binomial chance threshold."""
    k = ds.num_classes
    mc = _fit_config_channels(mc, ds)
    try:
        cropped = crop_dataset(ds, crop)
    except CropError as exc:
        return CropProbeResult(status="SKIPPED", accuracy=None,
                               chance=1.0 / k, threshold=1.0,
                               confidence=confidence, n_test=0, flag=None,
                               message=str(exc))
    manifest = split_dataset(cropped, fractions, data_seed)
    _require_test_items(manifest)
    _, metrics, _ = _train_condition(cropped, manifest, Identity(), mc, tc,
                                     model_seed)
    n_test = int(metrics.confusion.sum())
    threshold = chance_threshold(n_test, k, confidence)
    flag = BIAS_INDICATED if metrics.accuracy > threshold else NO_INDICATION
    return CropProbeResult(status="OK", accuracy=metrics.accuracy,
                           chance=1.0 / k, threshold=threshold,
                           confidence=confidence, n_test=n_test, flag=flag,
                           metrics=metrics)
