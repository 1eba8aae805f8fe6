"""Desk-scale objective evaluation.

Two kinds of objective live here:

* :func:`evaluate` - fine-tune a width-scaled copy of a pre-trained
  :class:`~kmtpe.tinynet.TinyNet` under fake quantization and score it as test
  accuracy minus constraint penalties;
* :class:`BenchObjective` - cheap analytic functions on a categorical grid for
  optimizer races.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, InputError
from .hw import ConstraintSet, CostReport, HardwareSpec, cost_report
from .space import Configuration, scale_layers
from .tinynet import TinyNet, quantize_tensor

__all__ = [
    "SyntheticTask", "BenchObjective", "Evaluation", "quantize_tensor", "pretrain",
    "train", "accuracy", "scale_net", "evaluate", "bench_value",
]

TASK_KINDS = ("blobs2d", "two_spirals")
BENCH_KINDS = ("plateau_grid", "deceptive_flat", "quadratic_mixed")


@dataclass(frozen=True)
class SyntheticTask:
    """Balanced 2-D classification data, regenerated deterministically from ``seed``."""

    kind: str = "blobs2d"
    train_count: int = 512
    test_count: int = 512
    noise: float = 1.0
    classes: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ConfigurationError(f"unknown task kind {self.kind!r}")
        if self.kind == "two_spirals" and self.classes != 2:
            raise ConfigurationError("two_spirals has exactly 2 classes")
        if self.train_count < self.classes or self.test_count < self.classes:
            raise ConfigurationError("need at least one sample per class")

    def _draw(self, count, rng):
        y = np.arange(count) % self.classes
        if self.kind == "blobs2d":
            angle = 2 * np.pi * np.arange(self.classes) / self.classes
            centers = 3.0 * np.column_stack([np.cos(angle), np.sin(angle)])
            x = centers[y] + self.noise * rng.standard_normal((count, 2))
        else:
            t = np.sqrt(rng.uniform(0.05, 1.0, size=count)) * 3 * np.pi
            r = t / (3 * np.pi) * 4.0
            sign = np.where(y == 0, 1.0, -1.0)
            x = sign[:, None] * np.column_stack([r * np.cos(t), r * np.sin(t)])
            x += 0.25 * self.noise * rng.standard_normal((count, 2))
        perm = rng.permutation(count)
        return x[perm], y[perm]

    def generate(self):
        """Return ``(x_train, y_train, x_test, y_test)``."""
        rng = np.random.default_rng(self.seed)
        xtr, ytr = self._draw(self.train_count, rng)
        xte, yte = self._draw(self.test_count, rng)
        return xtr, ytr, xte, yte


# ---------------------------------------------------------------------------
# training


def train(net: TinyNet, x, y, epochs: int, bits=None, lr=0.01, batch_size=64, seed=0) -> TinyNet:
    """Adam on the mean loss, in place.  ``bits`` enables STE fake quantization.

    Returns the net; raises ``FloatingPointError`` on a non-finite loss.
    """
    rng = np.random.default_rng(seed)
    params = net.weights + net.biases
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    b1, b2, t = 0.9, 0.999, 0
    n = len(x)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            sel = order[start:start + batch_size]
            loss, gw, gb = net.backward(x[sel], y[sel], bits)
            if not math.isfinite(loss):
                raise FloatingPointError("non-finite training loss")
            t += 1
            for p, g, mi, vi in zip(params, gw + gb, m, v):
                mi *= b1
                mi += (1 - b1) * g
                vi *= b2
                vi += (1 - b2) * g * g
                p -= lr * (mi / (1 - b1 ** t)) / (np.sqrt(vi / (1 - b2 ** t)) + 1e-8)
    return net


def accuracy(net: TinyNet, x, y, bits=None) -> float:
    return float(np.mean(np.argmax(net.forward(x, bits), axis=1) == y))


def pretrain(task: SyntheticTask, hidden: Sequence[int] = (16, 16), epochs: int = 30,
             lr: float = 0.01, seed: int = 0, loss: str = "cross_entropy") -> TinyNet:
    """Full-precision template network for ``task``."""
    xtr, ytr, _, _ = task.generate()
    net = TinyNet.init([2, *hidden, task.classes], seed=seed, loss=loss)
    return train(net, xtr, ytr, epochs, lr=lr, seed=seed)


def scale_net(template: TinyNet, widths: Sequence[float], seed=0) -> TinyNet:
    """Width-scaled copy of ``template`` that starts from its trained weights.

    Narrowed layers keep their leading units.  Added units get fresh He-scaled
    incoming weights and zero outgoing weights, so widening alone does not
    change the network function.
    """
    rng = np.random.default_rng(seed)
    shapes = scale_layers(template.layers, widths)
    weights, biases = [], []
    for shape, w, b in zip(shapes, template.weights, template.biases):
        cin, cout = shape.in_channels, shape.out_channels
        new_w = np.zeros((cin, cout))
        rows, cols = min(cin, w.shape[0]), min(cout, w.shape[1])
        new_w[:rows, :cols] = w[:rows, :cols]
        if cout > w.shape[1]:
            new_w[:rows, w.shape[1]:] = rng.normal(0.0, np.sqrt(2.0 / cin), size=(rows, cout - w.shape[1]))
        new_b = np.zeros(cout)
        new_b[:cols] = b[:cols]
        weights.append(new_w)
        biases.append(new_b)
    return TinyNet(list(shapes), weights, biases, template.activation, template.loss)


@dataclass(frozen=True)
class Evaluation:
    objective: float
    accuracy: float
    model_size_bytes: int
    latency_cycles: int
    penalties: dict = field(default_factory=dict)
    failed: bool = False

    def metrics(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "model_size_bytes": self.model_size_bytes,
            "latency_cycles": self.latency_cycles,
            "penalties": dict(self.penalties),
        }


def penalized_objective(acc: float, report: CostReport, constraints: ConstraintSet,
                        multiplier: float = 10.0):
    """``accuracy - multiplier * sum(normalized violations)`` and the per-constraint penalties."""
    pen = {k: multiplier * v for k, v in constraints.violations(report).items()}
    return acc - sum(pen.values()), pen


def evaluate(config: Configuration, net_template: TinyNet, task: SyntheticTask,
             constraints: ConstraintSet | None = None, hw: HardwareSpec | None = None,
             epochs: int = 4, seed: int = 0, lr: float = 0.01, batch_size: int = 64,
             multiplier: float = 10.0, data=None) -> Evaluation:
    """Fine-tune and score one configuration.

    Weights and input activations of layer ``l`` are both quantized to
    ``config.bits[l]`` during training and testing.  ``data`` may carry a
    pre-generated ``task.generate()`` tuple to skip regeneration.
    """
    if epochs < 1:
        raise ConfigurationError("epochs must be >= 1")
    constraints = constraints or ConstraintSet()
    hw = hw or HardwareSpec()
    if len(config.bits) != len(net_template.layers):
        raise ConfigurationError("configuration does not match the network depth")
    xtr, ytr, xte, yte = data if data is not None else task.generate()
    report = cost_report(net_template.layers, config, hw)
    net = scale_net(net_template, config.widths, seed=seed)
    bits = None if all(b == 16 for b in config.bits) else list(config.bits)
    try:
        with np.errstate(over="raise", invalid="raise"):
            train(net, xtr, ytr, epochs, bits, lr=lr, batch_size=batch_size, seed=seed)
            acc = accuracy(net, xte, yte, bits)
    except FloatingPointError:
        return Evaluation(-math.inf, float("nan"), report.model_size_bytes,
                          report.latency_cycles, {}, failed=True)
    obj, pen = penalized_objective(acc, report, constraints, multiplier)
    return Evaluation(obj, acc, report.model_size_bytes, report.latency_cycles, pen)


# ---------------------------------------------------------------------------
# analytic benchmarks


@dataclass(frozen=True)
class BenchObjective:
    """Black-box test function on ``dims`` categorical axes of ``levels`` values.

    All kinds are scaled so the global maximum is exactly 1 and the minimum 0.

    ``plateau_grid``
        A separable bowl ``s(x) = 1 - mean_i ((x_i - x*_i)/(levels-1))**2``,
        quantized into ``steps`` plateaus; every point whose ``s`` falls in the
        lowest ``flat_fraction`` of the grid is tied at 0.
    ``deceptive_flat``
        0 almost everywhere; ``matches/dims`` steps toward the optimum once at
        least ``(1 - flat_fraction) * dims`` coordinates match it; a decoy
        plateau of height ``1 - margin`` around a point that disagrees with the
        optimum on every axis.
    ``quadratic_mixed``
        Half the axes are ordinal (quadratic penalty around the optimum), the
        other half categorical with a random score table; no plateaus.
    """

    kind: str = "plateau_grid"
    dims: int = 8
    levels: int = 5
    flat_fraction: float = 0.9
    steps: int = 10
    margin: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in BENCH_KINDS:
            raise ConfigurationError(f"unknown benchmark kind {self.kind!r}")
        if self.dims < 1 or self.levels < 2:
            raise ConfigurationError("need dims >= 1 and levels >= 2")
        if not 0 <= self.flat_fraction < 1:
            raise ConfigurationError("flat_fraction must be in [0, 1)")

    @property
    def candidates(self) -> list[tuple[int, ...]]:
        return [tuple(range(self.levels))] * self.dims

    def _rng(self):
        return np.random.default_rng(self.seed)

    @property
    def optimum_point(self) -> tuple[int, ...]:
        return tuple(int(v) for v in self._rng().integers(self.levels, size=self.dims))

    @property
    def optimum(self) -> float:
        return 1.0

    def _decoy(self):
        opt = np.asarray(self.optimum_point)
        shift = self._rng().integers(1, self.levels, size=self.dims + 1)[1:]
        return (opt + shift) % self.levels

    def _plateau_score(self, sq_dist):
        """``s`` from the integer summed squared distance; shared by threshold and value."""
        return 1.0 - np.asarray(sq_dist) / ((self.levels - 1) ** 2 * self.dims)

    def _plateau_threshold(self):
        """``flat_fraction`` quantile of ``s`` over the whole grid."""
        opt = np.asarray(self.optimum_point)
        per_axis = [(np.arange(self.levels) - o) ** 2 for o in opt]
        if self.levels ** self.dims <= 2_000_000:
            dist = np.zeros(1, dtype=np.int64)
            for sq in per_axis:
                dist = np.add.outer(dist, sq).ravel()
        else:
            rng = np.random.default_rng(self.seed + 1)
            dist = np.stack([rng.choice(sq, size=500_000) for sq in per_axis]).sum(axis=0)
        return float(np.quantile(self._plateau_score(dist), self.flat_fraction))

    def value(self, x: Sequence[int]) -> float:
        x = np.asarray(x, dtype=int)
        if x.shape != (self.dims,) or x.min() < 0 or x.max() >= self.levels:
            raise InputError(f"point must have {self.dims} coordinates in [0, {self.levels})")
        opt = np.asarray(self.optimum_point)
        if self.kind == "plateau_grid":
            s = float(self._plateau_score(int(np.sum((x - opt) ** 2))))
            floor = _cached_threshold(self)
            if s <= floor:
                return 0.0
            frac = (s - floor) / (1.0 - floor)
            return math.ceil(frac * self.steps - 1e-9) / self.steps
        if self.kind == "deceptive_flat":
            matches = int(np.sum(x == opt))
            if matches == self.dims:
                return 1.0
            if np.sum(x == self._decoy()) >= self.dims - 1:
                return 1.0 - self.margin
            if matches < math.ceil((1 - self.flat_fraction) * self.dims):
                return 0.0
            return (1.0 - 2 * self.margin) * matches / self.dims
        return _quadratic_mixed(self, x, opt)


_THRESHOLDS: dict = {}


def _cached_threshold(obj: BenchObjective) -> float:
    key = (obj.dims, obj.levels, obj.flat_fraction, obj.seed)
    if key not in _THRESHOLDS:
        _THRESHOLDS[key] = obj._plateau_threshold()
    return _THRESHOLDS[key]


def _quadratic_mixed(obj, x, opt):
    rng = np.random.default_rng(obj.seed + 7)
    n_ord = (obj.dims + 1) // 2
    span = obj.levels - 1
    worst = 0.0
    total = 0.0
    for i in range(obj.dims):
        if i < n_ord:
            weight = 1.0 + i % 3
            d = (x[i] - opt[i]) / span
            total -= weight * d * d
            worst -= weight * max(opt[i], span - opt[i]) ** 2 / span ** 2
        else:
            table = -rng.uniform(0.2, 1.0, size=obj.levels)
            table[opt[i]] = 0.0
            total += table[x[i]]
            worst += table.min()
    return float(1.0 - total / worst) if worst else 1.0


def bench_value(obj: BenchObjective, x: Sequence[int]) -> float:
    return obj.value(x)
