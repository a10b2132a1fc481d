"""Minimal dense-network substrate: forward/backward passes, inverted dropout
with a Monte-Carlo inference mode, and plain SGD training.

Backpropagation is written out by hand against numpy so that training is
single-threaded and bit-reproducible under fixed seeds. Dropout zeroes each
pre-activation coordinate with probability ``p`` and scales survivors by
``1 / (1 - p)``; masks are drawn either from the net's own seeded stream or
from a caller-supplied stream (required for concurrent MC inference).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu", "identity")
MODES = ("train", "infer_plain", "infer_mc")

FORMAT_VERSION = "densenet-v1"


@dataclass
class Dense:
    w: np.ndarray  # (fan_in, fan_out)
    b: np.ndarray  # (fan_out,)
    activation: str = "relu"
    dropout_p: float = 0.0

    def __post_init__(self) -> None:
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must be in [0, 1)")
        if self.w.ndim != 2 or self.b.shape != (self.w.shape[1],):
            raise ValueError("weight/bias shapes inconsistent")


def _dropout_active(mode: str) -> bool:
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    return mode in ("train", "infer_mc")


class DenseNet:
    """An ordered stack of dense layers with its own dropout stream."""

    def __init__(self, layers: list[Dense], seed: int = 0):
        for prev, nxt in zip(layers, layers[1:]):
            if prev.w.shape[1] != nxt.w.shape[0]:
                raise ValueError("adjacent layer dimensions do not chain")
        self.layers = layers
        self.seed = seed
        self._rng = np.random.default_rng(seed)

    @property
    def in_dim(self) -> int:
        return self.layers[0].w.shape[0]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].w.shape[1]

    def forward(self, x: np.ndarray, mode: str = "infer_plain", rng=None) -> np.ndarray:
        out, _ = self.forward_cached(x, mode, rng)
        return out

    def forward_cached(self, x: np.ndarray, mode: str = "infer_plain", rng=None):
        """Forward pass keeping per-layer caches (inputs, pre-activations, masks)."""
        drop = _dropout_active(mode)
        if rng is None:
            rng = self._rng
        a = np.atleast_2d(np.asarray(x, dtype=float))
        if a.shape[1] != self.in_dim:
            raise ValueError(f"input dim {a.shape[1]} != expected {self.in_dim}")
        caches = []
        for layer in self.layers:
            z = a @ layer.w + layer.b
            mask = None
            if drop and layer.dropout_p > 0.0:
                keep = 1.0 - layer.dropout_p
                mask = (rng.random(z.shape) < keep) / keep
                z = z * mask
            caches.append((a, z, mask))
            a = np.maximum(z, 0.0) if layer.activation == "relu" else z
        return a, caches

    def backprop(self, caches, grad_out: np.ndarray):
        """Propagate ``dL/d(output)`` back; returns ([(dw, db)], dL/d(input)).

        Uses the dropout masks recorded in ``caches`` so gradients match the
        forward pass exactly.
        """
        g = np.asarray(grad_out, dtype=float)
        grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            a_in, z, mask = caches[i]
            if layer.activation == "relu":
                g = g * (z > 0)
            if mask is not None:
                g = g * mask
            grads[i] = (a_in.T @ g, g.sum(axis=0))
            g = g @ layer.w.T
        return grads, g

    def backward(self, x: np.ndarray, target: np.ndarray, mode: str = "train", rng=None):
        """MSE loss and its gradients for every weight and bias."""
        pred, caches = self.forward_cached(x, mode, rng)
        target = np.atleast_2d(np.asarray(target, dtype=float))
        if target.shape != pred.shape:
            raise ValueError(f"target shape {target.shape} != prediction {pred.shape}")
        diff = pred - target
        loss = float(np.mean(diff**2))
        grads, _ = self.backprop(caches, 2.0 * diff / diff.size)
        return loss, grads

    def apply_grads(self, grads, learning_rate: float, velocity=None, momentum: float = 0.0):
        for i, layer in enumerate(self.layers):
            dw, db = grads[i]
            if momentum > 0.0 and velocity is not None:
                velocity[i][0][:] = momentum * velocity[i][0] - learning_rate * dw
                velocity[i][1][:] = momentum * velocity[i][1] - learning_rate * db
                layer.w += velocity[i][0]
                layer.b += velocity[i][1]
            else:
                layer.w -= learning_rate * dw
                layer.b -= learning_rate * db

    def params_digest(self) -> str:
        """SHA-256 over all parameter bytes; used for freeze checks."""
        h = hashlib.sha256()
        for layer in self.layers:
            h.update(np.ascontiguousarray(layer.w).tobytes())
            h.update(np.ascontiguousarray(layer.b).tobytes())
        return h.hexdigest()

    def copy(self) -> "DenseNet":
        layers = [
            Dense(layer.w.copy(), layer.b.copy(), layer.activation, layer.dropout_p)
            for layer in self.layers
        ]
        return DenseNet(layers, seed=self.seed)


def dense_net(
    dims: list[int],
    hidden_activation: str = "relu",
    out_activation: str = "identity",
    dropout_p: float = 0.0,
    seed: int = 0,
) -> DenseNet:
    """He-initialized net; dropout applies to hidden layers, never the output."""
    if len(dims) < 2:
        raise ValueError("need at least an input and an output dimension")
    rng = np.random.default_rng(seed)
    layers = []
    last = len(dims) - 2
    for i, (fan_in, fan_out) in enumerate(zip(dims, dims[1:])):
        activation = out_activation if i == last else hidden_activation
        scale = np.sqrt(2.0 / fan_in) if activation == "relu" else np.sqrt(1.0 / fan_in)
        w = rng.normal(0.0, scale, size=(fan_in, fan_out))
        b = np.zeros(fan_out)
        p = 0.0 if i == last else dropout_p
        layers.append(Dense(w, b, activation, p))
    return DenseNet(layers, seed=seed)


@dataclass
class TrainResult:
    losses: list[float] = field(default_factory=list)  # per-epoch mean MSE


def train(
    net: DenseNet,
    x: np.ndarray,
    y: np.ndarray,
    epochs: int,
    batch_size: int,
    learning_rate: float,
    seed: int = 0,
    momentum: float = 0.0,
) -> TrainResult:
    """Mini-batch SGD on MSE. Deterministic given the seed: one stream drives
    both the shuffle order and the dropout masks."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if len(x) == 0:
        raise ValueError("training set is empty")
    rng = np.random.default_rng(seed)
    velocity = [(np.zeros_like(l.w), np.zeros_like(l.b)) for l in net.layers]
    result = TrainResult()
    for _ in range(epochs):
        order = rng.permutation(len(x))
        epoch_loss = 0.0
        for start in range(0, len(x), batch_size):
            batch = order[start : start + batch_size]
            loss, grads = net.backward(x[batch], y[batch], mode="train", rng=rng)
            net.apply_grads(grads, learning_rate, velocity, momentum)
            epoch_loss += loss * len(batch)
        result.losses.append(epoch_loss / len(x))
    return result


# ---------------------------------------------------------------------------
# Serialization


def net_to_dict(net: DenseNet) -> dict:
    return {
        "format": FORMAT_VERSION,
        "seed": net.seed,
        "layers": [
            {
                "shape": list(layer.w.shape),
                "activation": layer.activation,
                "dropout_p": layer.dropout_p,
                "w": layer.w.tolist(),
                "b": layer.b.tolist(),
            }
            for layer in net.layers
        ],
    }


def net_from_dict(data: dict) -> DenseNet:
    if data.get("format") != FORMAT_VERSION:
        raise ValueError(f"unsupported net format {data.get('format')!r}")
    layers = [
        Dense(
            np.asarray(spec["w"], dtype=float),
            np.asarray(spec["b"], dtype=float),
            spec["activation"],
            spec["dropout_p"],
        )
        for spec in data["layers"]
    ]
    return DenseNet(layers, seed=data.get("seed", 0))
