"""Convolutional classifier training with corruption-matched augmentation.

The training-time augmentation duplicates a fraction of each epoch's samples
with a random share of positions replaced by N(0,1) draws — the same
replacement distribution the evaluation loop uses — so corrupted inputs are
not out-of-distribution at evaluation time.

An optional calibration term ties the predicted probability of an anchor
class to the sample's normalized distance from the decision boundary of the
synthetic task (requires per-sample f1/f2 metadata).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import Graph, LayerSpec, backward_batch, forward_batch, softmax
from .corruption import DEFAULT_K_GRID, round_half_up
from .errors import ConfigurationError, NumericError, TrainingError
from .seeding import derive_seed, rng_for
from .synthetic import TimeSeriesSample

FREQ_SUM_RANGE = (20.0, 100.0)


@dataclass(frozen=True)
class ArchConfig:
    """Conv stack shape.  The defaults trade width for wall-clock time so the
    full-size dataset trains on a single core; a wider 128-unit stride-1
    variant can be selected from the pipeline config."""

    conv_units: int = 64
    kernel_size: int = 11
    conv_strides: tuple[int, ...] = (2, 2, 1)
    dropout_rate: float = 0.2
    dense_units: int = 64


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 0.001
    weight_decay: float = 0.0
    momentum: float = 0.9
    augmentation_fraction: float = 0.5
    calibration: str = "off"  # off | class0 | class1
    patience: int = 10
    seed: int = 0
    arch: ArchConfig = field(default_factory=ArchConfig)

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be > 0")
        if not 0.0 <= self.augmentation_fraction <= 1.0:
            raise ConfigurationError("augmentation_fraction must be in [0,1]")
        if self.calibration not in ("off", "class0", "class1"):
            raise ConfigurationError(f"unknown calibration mode {self.calibration!r}")


@dataclass
class DatasetSplits:
    train: list[TimeSeriesSample]
    val: list[TimeSeriesSample]
    test: list[TimeSeriesSample]


@dataclass
class TrainedModel:
    graph: Graph
    class_count: int
    training_report: list[dict]
    test_accuracy: float


def build_graph(input_features: int, class_count: int, arch: ArchConfig,
                seed: int = 0) -> Graph:
    specs: list[LayerSpec] = []
    for stride in arch.conv_strides:
        specs.append(LayerSpec("conv1d", units=arch.conv_units,
                               kernel_size=arch.kernel_size, stride=stride))
        specs.append(LayerSpec("relu", dropout_rate=arch.dropout_rate))
    specs.append(LayerSpec("global_avg_pool"))
    specs.append(LayerSpec("dense", units=arch.dense_units))
    specs.append(LayerSpec("relu"))
    specs.append(LayerSpec("dense", units=class_count))
    return Graph(specs, input_features=input_features, seed=seed)


def normalized_frequency_sum(f_sum: np.ndarray | float) -> np.ndarray | float:
    """Map f1+f2 from its generative range onto [0, 1]."""
    lo, hi = FREQ_SUM_RANGE
    return (np.asarray(f_sum, dtype=np.float64) - lo) / (hi - lo)


def calibration_loss(probabilities: np.ndarray, labels: np.ndarray,
                     f_norm: np.ndarray, anchor_class: str) -> tuple[float, float, float]:
    """Cross-entropy plus the boundary-distance MSE term.

    anchor_class 'class0' targets 1 - f_norm for the class-0 probability;
    'class1' targets f_norm for the class-1 probability.  Returns
    (total, cross_entropy, mse).
    """
    probs = np.asarray(probabilities, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    if anchor_class not in ("class0", "class1"):
        raise ConfigurationError(f"anchor_class must be class0/class1, got {anchor_class!r}")
    f_norm = np.asarray(f_norm, dtype=np.float64)
    if np.any(~np.isfinite(f_norm)):
        raise ConfigurationError("calibration requires f1/f2 metadata for every sample")
    anchor = 0 if anchor_class == "class0" else 1
    target = (1.0 - f_norm) if anchor == 0 else f_norm
    ce = float(-np.mean(np.log(np.maximum(probs[np.arange(len(labels)), labels], 1e-300))))
    mse = float(np.mean((probs[:, anchor] - target) ** 2))
    return ce + mse, ce, mse


def calibration_target(f_sum: float, anchor_class: str) -> float:
    """Expected anchor-class probability for one sample."""
    f_norm = float(normalized_frequency_sum(f_sum))
    return 1.0 - f_norm if anchor_class == "class0" else f_norm


def augment_with_corruption(values: np.ndarray, labels: np.ndarray, fraction: float,
                            rng: np.random.Generator,
                            k_choices: Sequence[float] = DEFAULT_K_GRID,
                            ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Append corrupted copies of round(fraction * n) samples.

    Each copy has a uniformly chosen k from `k_choices`, and round(k * M * T)
    random positions replaced by N(0,1) draws; labels are preserved.  Returns
    (values, labels, source_index) where source_index maps every output row
    to the row it came from (originals map to themselves).
    """
    if not 0.0 <= fraction <= 1.0:
        raise ConfigurationError("augmentation fraction must be in [0,1]")
    n = len(values)
    source = np.arange(n)
    n_aug = round_half_up(fraction * n)
    if n_aug == 0:
        return values, labels, source
    picked = rng.choice(n, size=n_aug, replace=False)
    size = values.shape[1] * values.shape[2]
    copies = values[picked].copy()
    for row, src in enumerate(picked):
        k = float(rng.choice(np.asarray(k_choices, dtype=np.float64)))
        n_replace = round_half_up(k * size)
        if n_replace == 0:
            continue
        pos = rng.choice(size, size=n_replace, replace=False)
        flat = copies[row].reshape(-1)
        flat[pos] = rng.standard_normal(n_replace)
    return (np.concatenate([values, copies]),
            np.concatenate([labels, labels[picked]]),
            np.concatenate([source, picked]))


def _run_epoch(graph: Graph, velocity, values: np.ndarray, labels: np.ndarray,
               source: np.ndarray, f_sum_train, config: TrainConfig,
               epoch: int) -> tuple[float, int]:
    """One pass of momentum-SGD over the (augmented, shuffled) epoch data."""
    epoch_loss = 0.0
    epoch_hits = 0
    for start in range(0, len(values), config.batch_size):
        xb = values[start:start + config.batch_size]
        yb = labels[start:start + config.batch_size]
        bsz = len(xb)
        logits, caches = forward_batch(graph, xb, training=True,
                                       rng=rng_for(config.seed, "dropout", epoch, start))
        probs = softmax(logits)
        picked = probs[np.arange(bsz), yb]
        loss = float(-np.mean(np.log(np.maximum(picked, 1e-300))))
        d_logits = probs.copy()
        d_logits[np.arange(bsz), yb] -= 1.0
        d_logits /= bsz

        if f_sum_train is not None:
            anchor = 0 if config.calibration == "class0" else 1
            f_norm = normalized_frequency_sum(f_sum_train[source[start:start + bsz]])
            target = (1.0 - f_norm) if anchor == 0 else f_norm
            resid = probs[:, anchor] - target
            loss += float(np.mean(resid ** 2))
            d_probs = np.zeros_like(probs)
            d_probs[:, anchor] = 2.0 * resid / bsz
            d_logits += (d_probs - (d_probs * probs).sum(axis=1, keepdims=True)) * probs

        if not np.isfinite(loss):
            raise NumericError("non-finite training loss")
        grads, _ = backward_batch(graph, caches, d_logits)
        for g, p, v in zip(grads, graph.params, velocity):
            for name in g:
                step = g[name] + config.weight_decay * p[name]
                v[name] = config.momentum * v[name] - config.learning_rate * step
                p[name] += v[name]
        epoch_loss += loss * bsz
        epoch_hits += int(np.sum(np.argmax(logits, axis=1) == yb))
    return epoch_loss, epoch_hits


def _accuracy(graph: Graph, values: np.ndarray, labels: np.ndarray,
              chunk: int = 256) -> float:
    hits = 0
    for start in range(0, len(values), chunk):
        logits, _ = forward_batch(graph, values[start:start + chunk])
        hits += int(np.sum(np.argmax(logits, axis=1) == labels[start:start + chunk]))
    return hits / max(len(values), 1)


def _stack(samples: Sequence[TimeSeriesSample]):
    values = np.stack([s.values for s in samples]).astype(np.float64)
    labels = np.array([s.label for s in samples], dtype=np.intp)
    return values, labels


def train(splits: DatasetSplits, config: TrainConfig) -> TrainedModel:
    """Momentum-SGD training with early stopping on validation accuracy."""
    labels_seen = sorted({s.label for part in (splits.train, splits.val, splits.test)
                          for s in part})
    if len(labels_seen) < 2:
        raise ConfigurationError("training needs at least 2 classes")
    class_count = max(labels_seen) + 1

    x_train, y_train = _stack(splits.train)
    x_val, y_val = _stack(splits.val)
    x_test, y_test = _stack(splits.test)
    m = x_train.shape[1]

    f_sum_train = None
    if config.calibration != "off":
        if any(s.f1 is None or s.f2 is None for s in splits.train):
            raise ConfigurationError(
                "calibration needs synthetic f1/f2 metadata on every training sample")
        f_sum_train = np.array([s.f1 + s.f2 for s in splits.train], dtype=np.float64)

    graph = build_graph(m, class_count, config.arch, seed=derive_seed(config.seed, "init"))
    velocity = [{k: np.zeros_like(v) for k, v in p.items()} for p in graph.params]

    best_val = -1.0
    best_epoch = -1
    best_params = graph.copy_parameters()
    report: list[dict] = []

    for epoch in range(config.epochs):
        rng = rng_for(config.seed, "epoch", epoch)
        values, labels, source = augment_with_corruption(
            x_train, y_train, config.augmentation_fraction, rng)
        order = rng.permutation(len(values))
        values, labels, source = values[order], labels[order], source[order]

        t0 = time.perf_counter()
        try:
            epoch_loss, epoch_hits = _run_epoch(
                graph, velocity, values, labels, source, f_sum_train, config, epoch)
            val_acc = _accuracy(graph, x_val, y_val) if len(x_val) else 0.0
        except NumericError as exc:
            raise TrainingError(f"training diverged at epoch {epoch}: {exc}") from exc
        report.append({
            "epoch": epoch,
            "train_loss": epoch_loss / len(values),
            "train_accuracy": epoch_hits / len(values),
            "val_accuracy": val_acc,
            "seconds": time.perf_counter() - t0,
        })
        if val_acc > best_val:
            best_val = val_acc
            best_epoch = epoch
            best_params = graph.copy_parameters()
        elif epoch - best_epoch >= config.patience:
            break

    graph.set_parameters(best_params)
    test_acc = _accuracy(graph, x_test, y_test) if len(x_test) else 0.0
    return TrainedModel(graph=graph, class_count=class_count,
                        training_report=report, test_accuracy=test_acc)


def predict_probabilities(model: TrainedModel | Graph, x: np.ndarray) -> np.ndarray:
    """Softmax class probabilities for one [M, T] sample or a [B, M, T] batch."""
    graph = model.graph if isinstance(model, TrainedModel) else model
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 2:
        logits, _ = forward_batch(graph, arr[None])
        return softmax(logits)[0]
    logits, _ = forward_batch(graph, arr)
    return softmax(logits)
