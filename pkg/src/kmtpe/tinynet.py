"""Small dense networks with hand-written backpropagation.

The same forward pass serves Hessian analysis (full precision) and
quantization-aware evaluation: when ``bits`` is given, each layer's weights and
its input activations are fake-quantized to that layer's bit-width, and the
backward pass treats the rounding as identity (straight-through estimator).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InputError
from .space import LayerShape

LOSSES = ("cross_entropy", "mse")


def quantize_tensor(w, bits: int):
    """Symmetric per-tensor uniform fake quantization.

    ``scale = max|w| / (2**(bits-1) - 1)``; values are rounded to the integer
    grid, clamped and rescaled.  ``bits == 16`` returns the input unchanged and
    an all-zero tensor maps to zeros.
    """
    w = np.asarray(w, dtype=float)
    if bits == 16:
        return w
    if bits not in (2, 3, 4, 6, 8):
        raise InputError(f"unsupported bit-width {bits}")
    qmax = 2 ** (bits - 1) - 1
    amax = np.max(np.abs(w)) if w.size else 0.0
    if amax == 0.0:
        return np.zeros_like(w)
    s = amax / qmax
    return np.clip(np.round(w / s), -qmax, qmax) * s


@dataclass
class TinyNet:
    """Multi-layer perceptron ``x -> relu(x W1 + b1) -> ... -> x WL + bL``.

    ``weights[l]`` has shape ``(in, out)``.  Only dense layers are supported.
    """

    layers: list[LayerShape]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "relu"
    loss: str = "cross_entropy"
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.activation != "relu":
            raise InputError(f"unsupported activation {self.activation!r}")
        if self.loss not in LOSSES:
            raise InputError(f"unsupported loss {self.loss!r}")
        if not (len(self.layers) == len(self.weights) == len(self.biases)):
            raise InputError("layers, weights and biases must align")
        for i, (layer, w, b) in enumerate(zip(self.layers, self.weights, self.biases)):
            if layer.kind != "dense":
                raise InputError(f"layer {layer.name!r}: TinyNet supports dense layers only")
            if w.shape != (layer.in_channels, layer.out_channels) or b.shape != (layer.out_channels,):
                raise InputError(f"layer {layer.name!r}: parameter shape mismatch")
            if i and layer.in_channels != self.layers[i - 1].out_channels:
                raise InputError(f"layer {layer.name!r}: in_channels does not match previous layer")

    @classmethod
    def init(cls, sizes: Sequence[int], seed=0, loss="cross_entropy") -> "TinyNet":
        """He-initialized MLP with layer widths ``sizes`` (input first)."""
        rng = np.random.default_rng(seed)
        layers, weights, biases = [], [], []
        for i, (a, b) in enumerate(zip(sizes, sizes[1:])):
            layers.append(LayerShape(f"fc{i}", "dense", a, b))
            weights.append(rng.normal(0.0, np.sqrt(2.0 / a), size=(a, b)))
            biases.append(np.zeros(b))
        return cls(layers, weights, biases, loss=loss)

    @classmethod
    def linear(cls, w, loss="mse") -> "TinyNet":
        w = np.atleast_2d(np.asarray(w, dtype=float))
        layer = LayerShape("linear", "dense", w.shape[0], w.shape[1])
        return cls([layer], [w], [np.zeros(w.shape[1])], loss=loss)

    @property
    def sizes(self) -> list[int]:
        return [self.layers[0].in_channels] + [layer.out_channels for layer in self.layers]

    def copy(self) -> "TinyNet":
        return TinyNet(list(self.layers), [w.copy() for w in self.weights],
                       [b.copy() for b in self.biases], self.activation, self.loss)

    def with_layer_weights(self, layer: int, flat) -> "TinyNet":
        net = self.copy()
        net.weights[layer] = np.asarray(flat, dtype=float).reshape(self.weights[layer].shape)
        return net

    # -- forward / backward -------------------------------------------------

    def _check_batch(self, x, y):
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.layers[0].in_channels or x.shape[0] == 0:
            raise InputError(f"expected inputs of shape (n>0, {self.layers[0].in_channels}), got {x.shape}")
        if y is not None:
            y = np.asarray(y)
            if y.shape[0] != x.shape[0]:
                raise InputError("inputs and targets have different lengths")
            if self.loss == "mse":
                y = y.astype(float).reshape(x.shape[0], -1)
                if y.shape[1] != self.layers[-1].out_channels:
                    raise InputError("target width does not match network output")
            else:
                y = y.astype(int).ravel()
        return x, y

    def _forward(self, x, bits=None):
        inputs, pre = [], []
        a = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if bits is not None:
                a = quantize_tensor(a, bits[i])
                w = quantize_tensor(w, bits[i])
            inputs.append(a)
            z = a @ w + b
            pre.append(z)
            a = z if i == last else np.maximum(z, 0.0)
        return a, inputs, pre

    def forward(self, x, bits=None):
        x, _ = self._check_batch(x, None)
        return self._forward(x, bits)[0]

    def _loss_and_dz(self, z, y):
        n = z.shape[0]
        if self.loss == "mse":
            r = z - y
            return float(np.sum(r * r) / n), 2.0 * r / n
        z = z - z.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        p = np.exp(logp)
        loss = -float(np.mean(logp[np.arange(n), y]))
        p[np.arange(n), y] -= 1.0
        return loss, p / n

    def loss_value(self, x, y, bits=None) -> float:
        x, y = self._check_batch(x, y)
        return self._loss_and_dz(self._forward(x, bits)[0], y)[0]

    def _deltas(self, dz, inputs, pre, bits=None):
        """Backpropagate ``dz`` (gradient at the output) to every layer's pre-activation."""
        deltas = [None] * len(self.weights)
        d = dz
        for i in range(len(self.weights) - 1, -1, -1):
            deltas[i] = d
            if i:
                w = self.weights[i] if bits is None else quantize_tensor(self.weights[i], bits[i])
                d = (d @ w.T) * (pre[i - 1] > 0)
        return deltas

    def backward(self, x, y, bits=None):
        """Return ``(loss, weight_grads, bias_grads)`` of the mean loss."""
        x, y = self._check_batch(x, y)
        z, inputs, pre = self._forward(x, bits)
        loss, dz = self._loss_and_dz(z, y)
        deltas = self._deltas(dz, inputs, pre, bits)
        gw = [a.T @ d for a, d in zip(inputs, deltas)]
        gb = [d.sum(axis=0) for d in deltas]
        return loss, gw, gb

    def output_jacobian(self, x, layer: int):
        """Per-sample Jacobian of the outputs w.r.t. one layer's flattened weights.

        Shape ``(n, out, weight_count)``.
        """
        x, _ = self._check_batch(x, None)
        z, inputs, pre = self._forward(x)
        n, k = z.shape
        jac = np.empty((n, k, self.weights[layer].size))
        for j in range(k):
            dz = np.zeros_like(z)
            dz[:, j] = 1.0
            d = self._deltas(dz, inputs, pre)[layer]
            jac[:, j, :] = (inputs[layer][:, :, None] * d[:, None, :]).reshape(n, -1)
        return jac, z

    # -- persistence --------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "layers": [layer.to_dict() for layer in self.layers],
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "activation": self.activation,
            "loss": self.loss,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TinyNet":
        return cls([LayerShape.from_dict(x) for x in d["layers"]],
                   [np.asarray(w, dtype=float) for w in d["weights"]],
                   [np.asarray(b, dtype=float) for b in d["biases"]],
                   d.get("activation", "relu"), d.get("loss", "cross_entropy"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "TinyNet":
        return cls.from_dict(json.loads(Path(path).read_text()))
