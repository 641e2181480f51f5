"""Reference target classifier: three conv blocks and a fully connected head.

Layer widths (16/32/64, 3x3 kernels) are a stand-in chosen so the model
trains to >=0.90 test accuracy on the procedural sign dataset in minutes on
a CPU; the architecture descriptor travels with the weights so loaders can
reject anything else.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .errors import DivergenceError, ShapeError, ValidationError, WeightFormatError
from .optim import AdamState, adam_step
from .rng import substream
from .rpw import read_rpw, write_rpw

ARCH_ID = "conv16-32-64-fc"
CONV_WIDTHS = (16, 32, 64)
LAYER_ORDER = (
    "conv1.kernels",
    "conv1.bias",
    "conv2.kernels",
    "conv2.bias",
    "conv3.kernels",
    "conv3.bias",
    "fc.weights",
    "fc.bias",
)


@dataclass
class ModelParameters:
    architecture_id: str
    class_count: int
    input_side: int
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def expected_shapes(self) -> dict[str, tuple[int, ...]]:
        side = self.input_side
        feat = (side // 8) ** 2 * CONV_WIDTHS[2]
        widths = (3,) + CONV_WIDTHS
        shapes: dict[str, tuple[int, ...]] = {}
        for i in range(3):
            shapes[f"conv{i + 1}.kernels"] = (3, 3, widths[i], widths[i + 1])
            shapes[f"conv{i + 1}.bias"] = (widths[i + 1],)
        shapes["fc.weights"] = (feat, self.class_count)
        shapes["fc.bias"] = (self.class_count,)
        return shapes

    def validate(self) -> None:
        if self.architecture_id != ARCH_ID:
            raise WeightFormatError(
                f"architecture mismatch: expected {ARCH_ID!r}, got {self.architecture_id!r}"
            )
        if self.class_count < 2:
            raise ValidationError(f"class_count must be >= 2, got {self.class_count}")
        if self.input_side < 8 or self.input_side % 8:
            raise ValidationError(
                f"input_side must be a positive multiple of 8, got {self.input_side}"
            )
        expected = self.expected_shapes()
        if set(self.tensors) != set(expected):
            raise WeightFormatError(
                f"layer set mismatch: expected {sorted(expected)}, got {sorted(self.tensors)}"
            )
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise WeightFormatError(
                    f"layer {name!r} has shape {self.tensors[name].shape}, expected {shape}"
                )


@dataclass
class TrainConfig:
    epochs: int = 15
    batch_size: int = 64
    learning_rate: float = 1e-3
    seed: int = 0
    augmentation: bool = False

    def __post_init__(self):
        if self.epochs < 0:
            raise ValidationError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    val_accuracy: float


def init_parameters(class_count: int, input_side: int = 32, seed: int = 0) -> ModelParameters:
    """He-normal conv/fc weights, zero biases."""
    rng = substream(seed, "model-init")
    tensors: dict[str, np.ndarray] = {}
    widths = (3,) + CONV_WIDTHS
    for i in range(3):
        fan_in = 3 * 3 * widths[i]
        tensors[f"conv{i + 1}.kernels"] = (
            rng.standard_normal((3, 3, widths[i], widths[i + 1])) * np.sqrt(2.0 / fan_in)
        ).astype(np.float32)
        tensors[f"conv{i + 1}.bias"] = np.zeros(widths[i + 1], dtype=np.float32)
    feat = (input_side // 8) ** 2 * CONV_WIDTHS[2]
    tensors["fc.weights"] = (rng.standard_normal((feat, class_count)) * np.sqrt(2.0 / feat)).astype(
        np.float32
    )
    tensors["fc.bias"] = np.zeros(class_count, dtype=np.float32)
    return ModelParameters(ARCH_ID, class_count, input_side, tensors)


def _check_images(params: ModelParameters, images: np.ndarray) -> np.ndarray:
    images = np.asarray(images)
    if images.ndim == 3:
        images = images[None]
    s = params.input_side
    if images.ndim != 4 or images.shape[1:] != (s, s, 3):
        raise ShapeError(
            f"images must be [N, {s}, {s}, 3] for this model, got {images.shape}"
        )
    ops.ensure_finite(images, "images")
    lo, hi = float(images.min(initial=0.0)), float(images.max(initial=1.0))
    if lo < 0.0 or hi > 1.0:
        raise ValidationError(f"pixel values must lie in [0, 1], found range [{lo}, {hi}]")
    return images


def forward_with_cache(params: ModelParameters, images: np.ndarray):
    x = _check_images(params, images)
    t = params.tensors
    cache = {"x0": x}
    h = x
    for i in (1, 2, 3):
        pre = ops.conv2d(h, t[f"conv{i}.kernels"], stride=1, padding="same") + t[f"conv{i}.bias"]
        act = ops.relu(pre)
        pooled = ops.maxpool2(act)
        cache[f"in{i}"], cache[f"pre{i}"], cache[f"act{i}"] = h, pre, act
        h = pooled
    cache["pooled"] = h
    flat = h.reshape(h.shape[0], -1)
    cache["flat"] = flat
    logits = ops.dense(flat, t["fc.weights"], t["fc.bias"])
    return logits, cache


def forward(params: ModelParameters, images: np.ndarray) -> np.ndarray:
    """Logits for a batch of [N, side, side, 3] images with pixels in [0, 1]."""
    logits, _ = forward_with_cache(params, images)
    return logits


def backward(params: ModelParameters, cache: dict, grad_logits: np.ndarray):
    """VJP through the whole network: (per-layer grads, grad wrt input images)."""
    t = params.tensors
    g_flat, g_fcw, g_fcb = ops.dense_backward(cache["flat"], t["fc.weights"], grad_logits)
    grads = {"fc.weights": g_fcw, "fc.bias": g_fcb}
    g = g_flat.reshape(cache["pooled"].shape)
    for i in (3, 2, 1):
        g = ops.maxpool2_backward(cache[f"act{i}"], g)
        g = ops.relu_backward(cache[f"pre{i}"], g)
        grads[f"conv{i}.bias"] = g.sum(axis=(0, 1, 2))
        g, g_k = ops.conv2d_backward(cache[f"in{i}"], t[f"conv{i}.kernels"], g, 1, "same")
        grads[f"conv{i}.kernels"] = g_k
    return grads, g


def predict_batch(params: ModelParameters, images: np.ndarray):
    """(labels, confidences, softmax rows); argmax ties go to the smallest index."""
    logits = forward(params, images)
    probs = ops.softmax(logits)
    labels = probs.argmax(axis=1)  # argmax returns the first (smallest) index on ties
    conf = probs[np.arange(len(labels)), labels]
    return labels.astype(int), conf.astype(float), probs


def predict(params: ModelParameters, image: np.ndarray) -> tuple[int, float, np.ndarray]:
    labels, conf, probs = predict_batch(params, image[None] if image.ndim == 3 else image)
    return int(labels[0]), float(conf[0]), probs[0]


def accuracy(params: ModelParameters, images: np.ndarray, labels: np.ndarray, batch: int = 256) -> float:
    hits = 0
    for start in range(0, len(images), batch):
        pred, _, _ = predict_batch(params, images[start : start + batch])
        hits += int((pred == labels[start : start + batch]).sum())
    return hits / len(images)


def _augment(images: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    shift = rng.uniform(-0.1, 0.1, size=(len(images), 1, 1, 1)).astype(np.float32)
    noise = rng.normal(0.0, 0.005, size=images.shape).astype(np.float32)
    return np.clip(images + shift + noise, 0.0, 1.0)


def train(dataset, config: TrainConfig) -> tuple[ModelParameters, list[EpochMetrics]]:
    """Adam-train on dataset.train, checkpointing on best dataset.val accuracy.

    `dataset` carries .train/.val/.test splits, each with .images and .labels.
    Deterministic given config.seed.
    """
    tr, va = dataset.train, dataset.val
    for split_name, split in (("train", tr), ("val", va), ("test", dataset.test)):
        if len(split.images) == 0:
            raise ValidationError(f"{split_name} split is empty")
    if config.batch_size > len(tr.images):
        raise ValidationError(
            f"batch_size {config.batch_size} exceeds training-set size {len(tr.images)}"
        )
    class_count = int(max(tr.labels.max(), va.labels.max(), dataset.test.labels.max())) + 1
    side = tr.images.shape[1]
    params = init_parameters(class_count, input_side=side, seed=config.seed)

    state = AdamState(eta=config.learning_rate)
    best = copy.deepcopy(params)
    best_acc = -1.0
    metrics: list[EpochMetrics] = []
    n = len(tr.images)
    for epoch in range(config.epochs):
        order = substream(config.seed, "train-shuffle", epoch).permutation(n)
        losses = []
        for bi, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start : start + config.batch_size]
            batch = tr.images[idx]
            if config.augmentation:
                batch = _augment(batch, substream(config.seed, "train-augment", epoch, bi))
            logits, cache = forward_with_cache(params, batch)
            loss, g_logits = ops.softmax_cross_entropy(logits, tr.labels[idx])
            if not np.isfinite(loss):
                raise DivergenceError(f"training loss diverged at epoch {epoch}", step=epoch)
            grads, _ = backward(params, cache, g_logits)
            params_tensors, state = adam_step(params.tensors, grads, state)
            params = ModelParameters(ARCH_ID, class_count, side, params_tensors)
            losses.append(loss)
        val_acc = accuracy(params, va.images, va.labels)
        metrics.append(EpochMetrics(epoch, float(np.mean(losses)), val_acc))
        if val_acc > best_acc:
            best_acc = val_acc
            best = copy.deepcopy(params)
    if config.epochs == 0:
        best = params
    return best, metrics


def save_weights(params: ModelParameters, path) -> None:
    write_rpw(
        path,
        params.architecture_id,
        params.class_count,
        params.input_side,
        [params.tensors[name] for name in LAYER_ORDER],
    )


def load_weights(path) -> ModelParameters:
    arch_id, class_count, input_side, tensors = read_rpw(path, tensor_names=LAYER_ORDER)
    if arch_id != ARCH_ID:
        raise WeightFormatError(
            f"architecture mismatch: file holds {arch_id!r}, expected {ARCH_ID!r}"
        )
    if len(tensors) != len(LAYER_ORDER):
        raise WeightFormatError(
            f"expected {len(LAYER_ORDER)} layer tensors, file holds {len(tensors)}"
        )
    return ModelParameters(
        arch_id, class_count, input_side, dict(zip(LAYER_ORDER, tensors))
    )
