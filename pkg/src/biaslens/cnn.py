"""A compact, deterministic, from-scratch convolutional network engine.

VGG-style stacks only: 3x3 convolutions (stride 1, zero padding 1) with
ReLU, 2x2 max-pool after each block, then dense layers with ReLU and a
final linear layer producing raw logits. Everything runs in float64 so
gradient checks and bit-level determinism assertions stay sharp.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError

_CHECKPOINT_MAGIC = b"BLNS1"


@dataclass(frozen=True)
class ModelConfig:
    input_h: int = 64
    input_w: int = 64
    input_c: int = 1
    blocks: tuple = ((2, 16), (2, 32))  # (convs_per_block, filters)
    dense_widths: tuple = (128,)
    num_classes: int = 2

    def __post_init__(self):
        object.__setattr__(self, "blocks",
                           tuple((int(a), int(b)) for a, b in self.blocks))
        object.__setattr__(self, "dense_widths",
                           tuple(int(w) for w in self.dense_widths))
        div = 2 ** len(self.blocks)
        if self.input_h % div or self.input_w % div:
            raise ConfigError(
                f"input {self.input_h}x{self.input_w} not divisible by "
                f"2^{len(self.blocks)}")
        if self.input_c not in (1, 3):
            raise ConfigError(f"input channels must be 1 or 3, got {self.input_c}")
        if self.num_classes < 2:
            raise ConfigError("need at least 2 classes")
        for convs, filters in self.blocks:
            if convs < 1 or filters < 1:
                raise ConfigError(f"bad block spec ({convs}, {filters})")
        if any(w < 1 for w in self.dense_widths):
            raise ConfigError("dense widths must be >= 1")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigError("Adam betas must lie in (0, 1)")
        if self.epsilon <= 0:
            raise ConfigError("Adam epsilon must be positive")


def parameter_shapes(cfg: ModelConfig) -> list:
    """Weight/bias array shapes in declaration order."""
    shapes = []
    c = cfg.input_c
    h, w = cfg.input_h, cfg.input_w
    for convs, filters in cfg.blocks:
        for _ in range(convs):
            shapes.append(("conv_w", (3, 3, c, filters)))
            shapes.append(("conv_b", (filters,)))
            c = filters
        h //= 2
        w //= 2
    feat = h * w * c
    for width in cfg.dense_widths:
        shapes.append(("dense_w", (feat, width)))
        shapes.append(("dense_b", (width,)))
        feat = width
    shapes.append(("dense_w", (feat, cfg.num_classes)))
    shapes.append(("dense_b", (cfg.num_classes,)))
    return shapes


class Model:
    """A parameter set plus Adam state, tied to one ModelConfig."""

    def __init__(self, config: ModelConfig, params: list):
        self.config = config
        self.params = params
        self.adam_m = [np.zeros_like(p) for p in params]
        self.adam_v = [np.zeros_like(p) for p in params]
        self.adam_t = 0

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params)

    def assert_finite(self):
        for p in self.params:
            if not np.all(np.isfinite(p)):
                raise FloatingPointError("non-finite model parameter detected")


def init_model(config: ModelConfig, seed: int) -> Model:
    """He-normal weights (std = sqrt(2 / fan_in)), zero biases.
    Identical seeds give bit-identical parameters."""
    rng = np.random.default_rng(seed)
    params = []
    for kind, shape in parameter_shapes(config):
        if kind.endswith("_b"):
            params.append(np.zeros(shape))
        else:
            fan_in = int(np.prod(shape[:-1]))
            std = np.sqrt(2.0 / fan_in)
            params.append(rng.normal(0.0, std, size=shape))
    return Model(config, params)


# ---------------------------------------------------------------------------
# Layers


def _conv_im2col(x: np.ndarray) -> np.ndarray:
    # x (N, H, W, C) zero-padded by 1 -> columns (N*H*W, 9*C) in
    # (kh, kw, c) order, matching w.reshape(9*C, F).
    n, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))  # (N, H, W, C, 3, 3)
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(
        n * h * w, 9 * c)


def _conv_forward(x, w, b):
    n, h, wid, c = x.shape
    f = w.shape[3]
    cols = _conv_im2col(x)
    out = cols @ w.reshape(9 * c, f) + b
    return out.reshape(n, h, wid, f), cols


def _conv_backward(dout, cols, x_shape, w):
    n, h, wid, c = x_shape
    f = w.shape[3]
    dflat = dout.reshape(n * h * wid, f)
    dw = (cols.T @ dflat).reshape(3, 3, c, f)
    db = dflat.sum(axis=0)
    # dx = same-padding convolution of dout with the rotated kernel
    w_rot = w[::-1, ::-1].transpose(0, 1, 3, 2)  # (3, 3, F, C)
    dcols = _conv_im2col(dout)
    dx = (dcols @ w_rot.reshape(9 * f, c)).reshape(n, h, wid, c)
    return dx, dw, db


def _pool_forward(x):
    n, h, w, c = x.shape
    r = x.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4)
    r = np.ascontiguousarray(r).reshape(n, h // 2, w // 2, c, 4)
    idx = r.argmax(axis=4)  # ties resolve to the first window element
    out = np.take_along_axis(r, idx[..., None], axis=4)[..., 0]
    return out, idx


def _pool_backward(dout, idx, x_shape):
    n, h, w, c = x_shape
    dr = np.zeros((n, h // 2, w // 2, c, 4))
    np.put_along_axis(dr, idx[..., None], dout[..., None], axis=4)
    dr = dr.reshape(n, h // 2, w // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
    return np.ascontiguousarray(dr).reshape(n, h, w, c)


def _forward_pass(model: Model, x: np.ndarray, keep_cache: bool):
    cfg = model.config
    caches = [] if keep_cache else None
    pi = 0
    out = x
    for convs, _ in cfg.blocks:
        for _ in range(convs):
            w, b = model.params[pi], model.params[pi + 1]
            pre, cols = _conv_forward(out, w, b)
            post = np.maximum(pre, 0.0)
            if keep_cache:
                caches.append(("conv", cols, out.shape, w, pre))
            out = post
            pi += 2
        pooled, idx = _pool_forward(out)
        if keep_cache:
            caches.append(("pool", idx, out.shape))
        out = pooled
    flat_shape = out.shape
    out = out.reshape(out.shape[0], -1)
    if keep_cache:
        caches.append(("flatten", flat_shape))
    n_dense = len(cfg.dense_widths) + 1
    for d in range(n_dense):
        w, b = model.params[pi], model.params[pi + 1]
        pre = out @ w + b
        if d < n_dense - 1:
            post = np.maximum(pre, 0.0)
            if keep_cache:
                caches.append(("dense_relu", out, w, pre))
            out = post
        else:
            if keep_cache:
                caches.append(("dense", out, w))
            out = pre
        pi += 2
    return out, caches


def _check_batch(model: Model, batch) -> np.ndarray:
    cfg = model.config
    x = np.stack(batch) if isinstance(batch, (list, tuple)) else np.asarray(batch)
    x = x.astype(np.float64, copy=False)
    if x.ndim != 4 or x.shape[1:] != (cfg.input_h, cfg.input_w, cfg.input_c):
        raise ConfigError(
            f"batch shape {x.shape} does not match config input "
            f"{cfg.input_h}x{cfg.input_w}x{cfg.input_c}")
    return x


def forward(model: Model, batch) -> np.ndarray:
    """Raw logits for a batch (N x num_classes)."""
    x = _check_batch(model, batch)
    logits, _ = _forward_pass(model, x, keep_cache=False)
    return logits


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def loss_and_grad(model: Model, batch, labels):
    """Mean softmax cross-entropy and reverse-mode gradients for every
    parameter array (same shapes, declaration order)."""
    x = _check_batch(model, batch)
    y = np.asarray(labels, dtype=np.int64)
    if len(y) != x.shape[0] or len(y) == 0:
        raise ConfigError("labels must align with a nonempty batch")
    if y.min() < 0 or y.max() >= model.config.num_classes:
        raise ConfigError("label out of range")
    logits, caches = _forward_pass(model, x, keep_cache=True)
    n = x.shape[0]
    probs = _softmax(logits)
    loss = float(-np.mean(np.log(probs[np.arange(n), y])))

    dlogits = probs.copy()
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n

    grads = [None] * len(model.params)
    pi = len(model.params)
    dout = dlogits
    for cache in reversed(caches):
        kind = cache[0]
        if kind == "dense":
            _, inp, w = cache
            pi -= 2
            grads[pi] = inp.T @ dout
            grads[pi + 1] = dout.sum(axis=0)
            dout = dout @ w.T
        elif kind == "dense_relu":
            _, inp, w, pre = cache
            pi -= 2
            dpre = dout * (pre > 0.0)
            grads[pi] = inp.T @ dpre
            grads[pi + 1] = dpre.sum(axis=0)
            dout = dpre @ w.T
        elif kind == "flatten":
            _, shape = cache
            dout = dout.reshape(shape)
        elif kind == "pool":
            _, idx, shape = cache
            dout = _pool_backward(dout, idx, shape)
        elif kind == "conv":
            _, cols, x_shape, w, pre = cache
            pi -= 2
            dpre = dout * (pre > 0.0)
            dout, grads[pi], grads[pi + 1] = _conv_backward(
                dpre, cols, x_shape, w)
        else:  # pragma: no cover
            raise AssertionError(kind)
    return loss, grads


def adam_step(model: Model, grads, tc: TrainConfig) -> Model:
    """One standard Adam update with bias correction, in place."""
    if len(grads) != len(model.params):
        raise ConfigError("gradient list does not match parameter list")
    model.adam_t += 1
    t = model.adam_t
    bc1 = 1.0 - tc.beta1 ** t
    bc2 = 1.0 - tc.beta2 ** t
    for p, g, m, v in zip(model.params, grads, model.adam_m, model.adam_v):
        if g.shape != p.shape:
            raise ConfigError("gradient shape mismatch")
        m *= tc.beta1
        m += (1.0 - tc.beta1) * g
        v *= tc.beta2
        v += (1.0 - tc.beta2) * g * g
        p -= tc.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + tc.epsilon)
    return model


def predict_batch(model: Model, batch) -> np.ndarray:
    """Predicted class indices; ties break toward the lowest index."""
    logits = forward(model, batch)
    return logits.argmax(axis=1)


def accuracy(model: Model, images, labels, batch_size: int = 64) -> float:
    y = np.asarray(labels)
    correct = 0
    for i in range(0, len(y), batch_size):
        preds = predict_batch(model, images[i:i + batch_size])
        correct += int(np.sum(preds == y[i:i + batch_size]))
    return correct / len(y)


def train_model(model: Model, train, val, tc: TrainConfig):
    """Train for a fixed number of epochs (no early stopping).

    `train` and `val` are (images, labels) pairs; `val` may be None.
    Each epoch is one pass over a seeded shuffle of the training items.
    Returns the model and a history entry per epoch with the mean train
    loss and the validation accuracy.
    """
    x_train, y_train = train
    x_train = _check_batch(model, x_train)
    y_train = np.asarray(y_train, dtype=np.int64)
    if len(y_train) == 0:
        raise ConfigError("training set must be nonempty")
    rng = np.random.default_rng(tc.seed)
    history = []
    for epoch in range(tc.epochs):
        perm = rng.permutation(len(y_train))
        losses = []
        for i in range(0, len(perm), tc.batch_size):
            sel = perm[i:i + tc.batch_size]
            loss, grads = loss_and_grad(model, x_train[sel], y_train[sel])
            adam_step(model, grads, tc)
            losses.append(loss)
        model.assert_finite()
        entry = {"epoch": epoch, "train_loss": float(np.mean(losses))}
        if val is not None and len(val[1]) > 0:
            entry["val_accuracy"] = accuracy(model, val[0], val[1])
        history.append(entry)
    return model, history


# ---------------------------------------------------------------------------
# Checkpoints


def save_model(model: Model, path) -> None:
    """Binary container: magic `BLNS1`, then per parameter array a
    little-endian uint32 rank, uint64 dims, and raw float64 data, in
    declaration order. Configs go to a JSON sidecar at `<path>.json`."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        for p in model.params:
            fh.write(struct.pack("<I", p.ndim))
            fh.write(struct.pack(f"<{p.ndim}Q", *p.shape))
            fh.write(p.astype("<f8").tobytes(order="C"))
    sidecar = {
        "model_config": asdict(model.config),
        "adam_t": model.adam_t,
    }
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2,
                                                    sort_keys=True))


def load_model(path) -> Model:
    path = Path(path)
    sidecar = json.loads(Path(str(path) + ".json").read_text())
    mc = sidecar["model_config"]
    config = ModelConfig(
        input_h=mc["input_h"], input_w=mc["input_w"], input_c=mc["input_c"],
        blocks=tuple(tuple(b) for b in mc["blocks"]),
        dense_widths=tuple(mc["dense_widths"]),
        num_classes=mc["num_classes"])
    params = []
    with open(path, "rb") as fh:
        magic = fh.read(len(_CHECKPOINT_MAGIC))
        if magic != _CHECKPOINT_MAGIC:
            raise ConfigError(f"{path} is not a model checkpoint")
        for kind, shape in parameter_shapes(config):
            (ndim,) = struct.unpack("<I", fh.read(4))
            dims = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
            if dims != shape:
                raise ConfigError(
                    f"checkpoint shape {dims} does not match config {shape}")
            data = np.frombuffer(fh.read(8 * int(np.prod(dims))),
                                 dtype="<f8").reshape(dims)
            params.append(data.copy())
    model = Model(config, params)
    model.adam_t = int(sidecar.get("adam_t", 0))
    return model
