"""Minimal reverse-mode differentiation over a fixed layer vocabulary.

The vocabulary is deliberately closed: 1-D convolution, dense, ReLU, global
average pooling and softmax.  That is enough to train the convolutional
classifier and to compute input gradients for gradient-based attribution,
and it keeps every backward rule exhaustively testable against finite
differences.  There is no tape or graph compiler; a `Graph` is an ordered
list of layer specs plus parameter arrays, and forward/backward walk it.

Everything is float64.  Single precision breaks the 1e-3 completeness
checks used by the attribution tests.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError, NumericError, StateError

CHECKPOINT_FORMAT_VERSION = 1

LAYER_KINDS = ("conv1d", "dense", "relu", "global_avg_pool", "softmax")


@dataclass(frozen=True)
class LayerSpec:
    """One layer in the fixed vocabulary.

    `dropout_rate` applies to the layer's output in training mode only,
    with inverted scaling so inference needs no rescaling.
    """

    kind: str
    units: int = 0
    kernel_size: int = 1
    stride: int = 1
    dropout_rate: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in LAYER_KINDS:
            raise ConfigurationError(f"unknown layer kind {self.kind!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigurationError(f"dropout_rate must be in [0,1), got {self.dropout_rate}")
        if self.kind == "conv1d":
            if self.kernel_size < 1 or self.kernel_size % 2 == 0:
                raise ConfigurationError(
                    f"conv1d kernel_size must be odd and >= 1, got {self.kernel_size}")
            if self.units < 1:
                raise ConfigurationError("conv1d needs units >= 1")
            if self.stride < 1:
                raise ConfigurationError("conv1d stride must be >= 1")
        if self.kind == "dense" and self.units < 1:
            raise ConfigurationError("dense needs units >= 1")


def _as_f64(x) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(x, dtype=np.float64))


def _check_finite(arr: np.ndarray, layer_index: int, kind: str) -> None:
    # isfinite(sum) is O(n) without a bool temp; any nan/inf poisons the sum.
    if not np.isfinite(arr.sum()):
        raise NumericError(f"non-finite activation after layer {layer_index} ({kind})")


class Graph:
    """Ordered layer specs + parameters + (per-call) activation caches.

    A trained Graph is immutable in practice: forward in inference mode and
    input gradients never mutate it, so it can be shared across workers.
    Training updates parameters in place and must stay single-writer.
    """

    def __init__(self, specs: list[LayerSpec], input_features: int, seed: int = 0):
        if input_features < 1:
            raise ConfigurationError("input_features must be >= 1")
        self.specs = list(specs)
        self.input_features = input_features
        self.params: list[dict[str, np.ndarray]] = []
        self._validate_and_init(seed)

    def _validate_and_init(self, seed: int) -> None:
        rng = np.random.default_rng(seed)
        channels = self.input_features
        flat: Optional[int] = None  # None while the stream is [C, T]
        for i, spec in enumerate(self.specs):
            if spec.kind == "conv1d":
                if flat is not None:
                    raise ConfigurationError(f"layer {i}: conv1d after pooling/dense")
                fan_in = channels * spec.kernel_size
                w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(spec.units, fan_in))
                b = np.zeros(spec.units)
                self.params.append({"w": w, "b": b})
                channels = spec.units
            elif spec.kind == "dense":
                if flat is None:
                    raise ConfigurationError(
                        f"layer {i}: dense requires a pooled (flat) input; add global_avg_pool")
                w = rng.normal(0.0, np.sqrt(2.0 / flat), size=(spec.units, flat))
                b = np.zeros(spec.units)
                self.params.append({"w": w, "b": b})
                flat = spec.units
            elif spec.kind == "global_avg_pool":
                if flat is not None:
                    raise ConfigurationError(f"layer {i}: global_avg_pool on flat input")
                flat = channels
                self.params.append({})
            elif spec.kind in ("relu", "softmax"):
                self.params.append({})
            else:  # pragma: no cover - LayerSpec already validates
                raise ConfigurationError(f"unknown kind {spec.kind}")
        self._out_flat = flat

    @property
    def class_count(self) -> int:
        for spec in reversed(self.specs):
            if spec.kind == "dense":
                return spec.units
        raise ConfigurationError("graph has no dense layer; class count undefined")

    def copy_parameters(self) -> list[dict[str, np.ndarray]]:
        return [{k: v.copy() for k, v in p.items()} for p in self.params]

    def set_parameters(self, params: list[dict[str, np.ndarray]]) -> None:
        self.params = [{k: _as_f64(v) for k, v in p.items()} for p in params]


# ---------------------------------------------------------------------------
# layer forward/backward rules
# ---------------------------------------------------------------------------

def _conv1d_forward(spec: LayerSpec, params, x: np.ndarray):
    # x: [B, C, T]; "same"-style zero padding of k//2 on both ends.
    # Column layout is [B, C*k, out] so the GEMM writes y as [B, units, out]
    # directly and the backward scatter stays contiguous along time.
    b_sz, c_in, t = x.shape
    k, s = spec.kernel_size, spec.stride
    pad = k // 2
    xp = np.zeros((b_sz, c_in, t + 2 * pad))
    xp[:, :, pad:pad + t] = x
    out_len = (t + 2 * pad - k) // s + 1
    view = sliding_window_view(xp, k, axis=2)[:, :, ::s, :]      # [B, C, out, k]
    col = np.ascontiguousarray(view.transpose(0, 1, 3, 2)).reshape(b_sz, c_in * k, out_len)
    y = np.matmul(params["w"], col) + params["b"][None, :, None]
    cache = {"col": col, "in_shape": x.shape, "out_len": out_len}
    return y, cache


def _conv1d_backward(spec: LayerSpec, params, cache, dy: np.ndarray):
    b_sz, c_in, t = cache["in_shape"]
    k, s = spec.kernel_size, spec.stride
    pad = k // 2
    out_len = cache["out_len"]
    col = cache["col"]                                           # [B, C*k, out]
    dw = np.matmul(dy, col.transpose(0, 2, 1)).sum(axis=0)
    db = dy.sum(axis=(0, 2))
    dcol = np.matmul(params["w"].T, dy).reshape(b_sz, c_in, k, out_len)
    dxp = np.zeros((b_sz, c_in, t + 2 * pad))
    for j in range(k):
        dxp[:, :, j:j + s * out_len:s] += dcol[:, :, j, :]
    return {"w": dw, "b": db}, dxp[:, :, pad:pad + t]


def _dense_forward(spec: LayerSpec, params, x: np.ndarray):
    y = x @ params["w"].T + params["b"]
    return y, {"x": x}


def _dense_backward(spec: LayerSpec, params, cache, dy: np.ndarray):
    dw = dy.T @ cache["x"]
    db = dy.sum(axis=0)
    dx = dy @ params["w"]
    return {"w": dw, "b": db}, dx


def _relu_forward(spec: LayerSpec, params, x: np.ndarray):
    y = np.maximum(x, 0.0)
    return y, {"mask": x > 0.0}


def _relu_backward(spec: LayerSpec, params, cache, dy: np.ndarray):
    return {}, dy * cache["mask"]


def _gap_forward(spec: LayerSpec, params, x: np.ndarray):
    # [B, C, T] -> [B, C]; keeps the model length-agnostic.
    return x.mean(axis=2), {"t": x.shape[2]}


def _gap_backward(spec: LayerSpec, params, cache, dy: np.ndarray):
    t = cache["t"]
    return {}, np.repeat(dy[:, :, None], t, axis=2) / t


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax; rows sum to 1 within 1e-12."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _softmax_forward(spec: LayerSpec, params, x: np.ndarray):
    y = softmax(x)
    return y, {"y": y}


def _softmax_backward(spec: LayerSpec, params, cache, dy: np.ndarray):
    y = cache["y"]
    dot = (dy * y).sum(axis=-1, keepdims=True)
    return {}, (dy - dot) * y


_FORWARD = {
    "conv1d": _conv1d_forward,
    "dense": _dense_forward,
    "relu": _relu_forward,
    "global_avg_pool": _gap_forward,
    "softmax": _softmax_forward,
}
_BACKWARD = {
    "conv1d": _conv1d_backward,
    "dense": _dense_backward,
    "relu": _relu_backward,
    "global_avg_pool": _gap_backward,
    "softmax": _softmax_backward,
}


# ---------------------------------------------------------------------------
# graph-level passes
# ---------------------------------------------------------------------------

def forward_batch(graph: Graph, x: np.ndarray, training: bool = False,
                  rng: Optional[np.random.Generator] = None):
    """Run [B, M, T] through the graph; returns (outputs, cache list).

    The cache is per-call state for `backward_batch`; it is never stored on
    the graph, so concurrent forward passes do not interfere.
    """
    x = _as_f64(x)
    if x.ndim != 3 or x.shape[1] != graph.input_features:
        raise ConfigurationError(
            f"input shape {x.shape} does not match [B, {graph.input_features}, T]")
    if training and rng is None:
        rng = np.random.default_rng(0)
    caches = []
    for i, (spec, params) in enumerate(zip(graph.specs, graph.params)):
        x, cache = _FORWARD[spec.kind](spec, params, x)
        if training and spec.dropout_rate > 0.0:
            keep = (rng.random(x.shape) >= spec.dropout_rate) / (1.0 - spec.dropout_rate)
            x = x * keep
            cache["dropout_keep"] = keep
        _check_finite(x, i, spec.kind)
        caches.append(cache)
    return x, caches


def forward(graph: Graph, x: np.ndarray, training: bool = False,
            rng: Optional[np.random.Generator] = None):
    """Single-sample forward: [M, T] -> class scores before softmax, plus cache."""
    x = _as_f64(x)
    if x.ndim != 2:
        raise ConfigurationError(f"expected [M, T] input, got shape {x.shape}")
    out, caches = forward_batch(graph, x[None, :, :], training=training, rng=rng)
    return out[0], caches


def backward_batch(graph: Graph, caches, d_out: np.ndarray):
    """Reverse pass from d(outputs); returns (per-layer param grads, d_input)."""
    if caches is None or len(caches) != len(graph.specs):
        raise StateError("backward called without a matching forward cache")
    grads: list[dict[str, np.ndarray]] = [dict() for _ in graph.specs]
    dy = _as_f64(d_out)
    for i in range(len(graph.specs) - 1, -1, -1):
        spec = graph.specs[i]
        keep = caches[i].get("dropout_keep")
        if keep is not None:
            dy = dy * keep
        grads[i], dy = _BACKWARD[spec.kind](spec, graph.params[i], caches[i], dy)
    return grads, dy


def backward(graph: Graph, caches, d_out: np.ndarray):
    """Single-sample backward; d_out matches forward's output shape."""
    grads, dx = backward_batch(graph, caches, _as_f64(d_out)[None, ...])
    return grads, dx[0]


def input_gradient_batch(graph: Graph, x: np.ndarray, class_indices: np.ndarray,
                         target: str = "probability") -> np.ndarray:
    """d(score of class)/d(input) for a batch; target is 'logit' or 'probability'."""
    if target not in ("logit", "probability"):
        raise ConfigurationError(f"unknown gradient target {target!r}")
    x = _as_f64(x)
    idx = np.asarray(class_indices, dtype=np.intp)
    logits, caches = forward_batch(graph, x, training=False)
    n_classes = logits.shape[1]
    if np.any(idx < 0) or np.any(idx >= n_classes):
        raise ConfigurationError(f"class index out of range for {n_classes} classes")
    rows = np.arange(len(idx))
    if target == "logit":
        d_logits = np.zeros_like(logits)
        d_logits[rows, idx] = 1.0
    else:
        p = softmax(logits)
        pc = p[rows, idx][:, None]
        d_logits = -pc * p
        d_logits[rows, idx] += pc[:, 0]
    _, dx = backward_batch(graph, caches, d_logits)
    return dx


def input_gradient(graph: Graph, x: np.ndarray, class_index: int,
                   target: str = "probability") -> np.ndarray:
    """Gradient of one class's score at a single [M, T] input."""
    x = _as_f64(x)
    if x.ndim != 2:
        raise ConfigurationError(f"expected [M, T] input, got shape {x.shape}")
    return input_gradient_batch(graph, x[None], np.array([class_index]), target)[0]


# ---------------------------------------------------------------------------
# checkpoint I/O
# ---------------------------------------------------------------------------

def save_checkpoint(graph: Graph, path: str | Path, extra: Optional[dict] = None) -> None:
    """Self-describing JSON container; float64 values round-trip exactly."""
    doc = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "input_features": graph.input_features,
        "layers": [asdict(s) for s in graph.specs],
        "parameters": [
            {name: arr.tolist() for name, arr in p.items()} for p in graph.params
        ],
    }
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_checkpoint(path: str | Path) -> Graph:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    version = doc.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ConfigurationError(f"unsupported checkpoint format_version {version!r}")
    specs = [LayerSpec(**layer) for layer in doc["layers"]]
    graph = Graph(specs, input_features=doc["input_features"])
    params = []
    for spec, stored in zip(specs, doc["parameters"]):
        params.append({name: _as_f64(vals) for name, vals in stored.items()})
    graph.set_parameters(params)
    return graph
