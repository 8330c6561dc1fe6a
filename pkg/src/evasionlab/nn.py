"""Small dense feedforward classifiers on image tensors.

Everything runs in float64 numpy. Images are (channels, height, width)
arrays in [0, 1]; networks flatten them, apply dense layers, and expose
logits, softmax probabilities, cross-entropy input gradients, and plain
minibatch SGD training. Models serialize to a versioned JSON document.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

MODEL_FORMAT_VERSION = 1

ACTIVATIONS = ("relu", "tanh", "identity")


class ModelFormatError(ValueError):
    """Raised when a serialized model document is malformed."""


class UnsupportedModelVersion(ModelFormatError):
    """Raised when a model document declares an unknown format version."""


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_deriv(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    if name == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    return np.ones_like(z)


@dataclass(frozen=True)
class Layer:
    """One dense layer: weight (out, in), bias (out,), activation tag."""

    w: np.ndarray
    b: np.ndarray
    act: str = "relu"

    def __post_init__(self):
        if self.act not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.act!r}")
        if self.w.ndim != 2 or self.b.ndim != 1 or self.w.shape[0] != self.b.shape[0]:
            raise ValueError("layer weight/bias shapes inconsistent")


@dataclass(frozen=True)
class Network:
    """Dense feedforward net over flattened (c, h, w) inputs."""

    layers: tuple[Layer, ...]
    input_shape: tuple[int, int, int]

    def __post_init__(self):
        if len(self.layers) == 0:
            raise ValueError("network needs at least one layer")
        if len(self.input_shape) != 3 or any(s <= 0 for s in self.input_shape):
            raise ValueError(f"bad input_shape {self.input_shape!r}")
        fan = int(np.prod(self.input_shape))
        for i, layer in enumerate(self.layers):
            if layer.w.shape[1] != fan:
                raise ValueError(
                    f"layer {i} expects input size {layer.w.shape[1]}, got {fan}"
                )
            fan = layer.w.shape[0]

    @property
    def n_classes(self) -> int:
        return self.layers[-1].w.shape[0]


def make_mlp(
    input_shape: tuple[int, int, int],
    hidden: tuple[int, ...],
    n_classes: int,
    seed: int,
    act: str = "relu",
) -> Network:
    """Fresh MLP with Glorot-uniform weights.

    Hidden layers use `act`; the output layer is linear (identity tag).
    First-layer biases are set to -w @ 0.5 so pre-activations center on
    zero for mid-range inputs; pixel data lives in [0, 1], and without
    the shift the shared positive offset dominates early training and
    regularly kills relu nets.
    """
    if n_classes < 2:
        raise ValueError("need at least two classes")
    rng = np.random.default_rng(seed)
    sizes = [int(np.prod(input_shape))] + list(hidden) + [n_classes]
    layers = []
    for i in range(len(sizes) - 1):
        fan_in, fan_out = sizes[i], sizes[i + 1]
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        b = -0.5 * w.sum(axis=1) if i == 0 else np.zeros(fan_out)
        tag = act if i < len(sizes) - 2 else "identity"
        layers.append(Layer(w=w, b=b, act=tag))
    return Network(layers=tuple(layers), input_shape=tuple(input_shape))


def _check_input(net: Network, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if tuple(x.shape) != tuple(net.input_shape):
        raise ValueError(
            f"input shape {tuple(x.shape)} does not match model {tuple(net.input_shape)}"
        )
    return x


def _forward_batch(net: Network, a: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Returns per-layer (pre-activation z, post-activation a), batched rows."""
    cache = []
    for layer in net.layers:
        z = a @ layer.w.T + layer.b
        a = _act(layer.act, z)
        cache.append((z, a))
    return cache


def softmax(z: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax."""
    z = np.asarray(z, dtype=np.float64)
    shifted = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def logits(net: Network, x: np.ndarray) -> np.ndarray:
    """Raw class scores for one image."""
    x = _check_input(net, x)
    cache = _forward_batch(net, x.reshape(1, -1))
    return cache[-1][1][0]


def forward(net: Network, x: np.ndarray) -> np.ndarray:
    """Softmax class probabilities for one image."""
    return softmax(logits(net, x))


def predict_label(net: Network, x: np.ndarray) -> int:
    # argmax takes the lowest index on ties
    return int(np.argmax(logits(net, x)))


def input_gradient(net: Network, x: np.ndarray, target: int) -> np.ndarray:
    """Gradient of cross-entropy loss toward `target` w.r.t. the input.

    Loss is -log softmax(logits)[target]; the returned array has the
    input's (c, h, w) shape. Descending this gradient raises the
    target's probability.
    """
    x = _check_input(net, x)
    if not 0 <= target < net.n_classes:
        raise ValueError(f"target {target} out of range")
    flat = x.reshape(1, -1)
    cache = _forward_batch(net, flat)
    probs = softmax(cache[-1][1])
    # dL/d(post-activation of last layer) for CE-of-softmax
    da = probs.copy()
    da[0, target] -= 1.0
    for i in reversed(range(len(net.layers))):
        layer = net.layers[i]
        z = cache[i][0]
        dz = da * _act_deriv(layer.act, z)
        da = dz @ layer.w
    return da.reshape(net.input_shape)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    batch_size: int = 32
    learning_rate: float = 0.5
    momentum: float = 0.9
    lr_decay: float = 1.0  # lr glides to learning_rate * lr_decay by the last epoch
    l1: float = 0.0  # L1 weight penalty; concentrates units onto few inputs
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ValueError("lr_decay must be in (0, 1]")
        if self.l1 < 0.0:
            raise ValueError("l1 must be >= 0")


def _pairs_of(data) -> list[tuple[np.ndarray, int]]:
    items = getattr(data, "items", data)
    pairs = [(np.asarray(x, dtype=np.float64), int(y)) for x, y in items]
    if not pairs:
        raise ValueError("empty dataset")
    return pairs


def train_sgd(net: Network, data, cfg: TrainConfig) -> Network:
    """Minibatch SGD on cross-entropy; returns a newly trained network.

    `data` is a LabeledDataset or any iterable of (image, label) pairs.
    Deterministic for a fixed (net, data, cfg) triple.
    """
    pairs = _pairs_of(data)
    dim = int(np.prod(net.input_shape))
    xs = np.stack([p[0].reshape(-1) for p in pairs])
    ys = np.array([p[1] for p in pairs], dtype=np.int64)
    if xs.shape[1] != dim:
        raise ValueError("dataset images do not match model input shape")
    if ys.max() >= net.n_classes:
        raise ValueError("label outside model class range")

    ws = [layer.w.copy() for layer in net.layers]
    bs = [layer.b.copy() for layer in net.layers]
    acts = [layer.act for layer in net.layers]
    vw = [np.zeros_like(w) for w in ws]
    vb = [np.zeros_like(b) for b in bs]
    rng = np.random.default_rng(cfg.seed)
    n = xs.shape[0]

    for epoch in range(cfg.epochs):
        lr = cfg.learning_rate * cfg.lr_decay ** (epoch / max(1, cfg.epochs - 1))
        order = rng.permutation(n)
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            a = xs[idx]
            batch = a.shape[0]
            cache = []
            for w, b, tag in zip(ws, bs, acts):
                z = a @ w.T + b
                a = _act(tag, z)
                cache.append((z, a))
            probs = softmax(cache[-1][1])
            da = probs
            da[np.arange(batch), ys[idx]] -= 1.0
            da /= batch
            for i in reversed(range(len(ws))):
                z = cache[i][0]
                dz = da * _act_deriv(acts[i], z)
                prev = cache[i - 1][1] if i > 0 else xs[idx]
                gw = dz.T @ prev
                if cfg.l1 > 0.0:
                    gw += cfg.l1 * np.sign(ws[i])
                gb = dz.sum(axis=0)
                da = dz @ ws[i]
                vw[i] = cfg.momentum * vw[i] - lr * gw
                vb[i] = cfg.momentum * vb[i] - lr * gb
                ws[i] += vw[i]
                bs[i] += vb[i]

    layers = tuple(
        Layer(w=w, b=b, act=tag) for w, b, tag in zip(ws, bs, acts)
    )
    return Network(layers=layers, input_shape=net.input_shape)


def accuracy(net: Network, data) -> float:
    pairs = _pairs_of(data)
    xs = np.stack([p[0].reshape(-1) for p in pairs])
    ys = np.array([p[1] for p in pairs], dtype=np.int64)
    cache = _forward_batch(net, xs)
    pred = np.argmax(cache[-1][1], axis=1)
    return float(np.mean(pred == ys))


def save_model(net: Network, path) -> None:
    """Write the versioned JSON model document."""
    doc = {
        "version": MODEL_FORMAT_VERSION,
        "input_shape": list(net.input_shape),
        "layers": [
            {"w": layer.w.tolist(), "b": layer.b.tolist(), "act": layer.act}
            for layer in net.layers
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def _field(doc: dict, key: str, where: str):
    if key not in doc:
        raise ModelFormatError(f"missing field {where}.{key}")
    return doc[key]


def load_model(path) -> Network:
    """Read a model document; rejects unknown versions and bad fields."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as e:
        raise ModelFormatError(f"model file is not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise ModelFormatError("model document root must be an object")
    version = _field(doc, "version", "$")
    if version != MODEL_FORMAT_VERSION:
        raise UnsupportedModelVersion(f"unsupported model version {version!r}")
    shape = _field(doc, "input_shape", "$")
    if (
        not isinstance(shape, list)
        or len(shape) != 3
        or not all(isinstance(s, int) and s > 0 for s in shape)
    ):
        raise ModelFormatError("$.input_shape must be three positive integers")
    raw_layers = _field(doc, "layers", "$")
    if not isinstance(raw_layers, list) or not raw_layers:
        raise ModelFormatError("$.layers must be a non-empty list")
    layers = []
    for i, entry in enumerate(raw_layers):
        where = f"$.layers[{i}]"
        if not isinstance(entry, dict):
            raise ModelFormatError(f"{where} must be an object")
        try:
            w = np.array(_field(entry, "w", where), dtype=np.float64)
            b = np.array(_field(entry, "b", where), dtype=np.float64)
        except (TypeError, ValueError) as e:
            raise ModelFormatError(f"{where} has non-numeric weights: {e}") from e
        act = _field(entry, "act", where)
        if act not in ACTIVATIONS:
            raise ModelFormatError(f"{where}.act unknown activation {act!r}")
        if w.ndim != 2 or b.ndim != 1:
            raise ModelFormatError(f"{where} weight/bias ranks are wrong")
        try:
            layers.append(Layer(w=w, b=b, act=act))
        except ValueError as e:
            raise ModelFormatError(f"{where}: {e}") from e
    try:
        return Network(layers=tuple(layers), input_shape=tuple(shape))
    except ValueError as e:
        raise ModelFormatError(f"$.layers: {e}") from e
