"""Per-layer Hessian-trace sensitivity of a :class:`~kmtpe.tinynet.TinyNet`.

Second derivatives come from central differences of the exact gradient, so
there is no second-order autodiff.  The trace estimator draws Rademacher probes
``v`` and averages ``v^T H v`` with ``H v`` approximated as
``(g(w + eps v) - g(w - eps v)) / (2 eps)``, ``eps = 1e-3 * (1 + max|w|)``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .cluster import k_means_and_sort
from .errors import CapacityError, ConfigurationError, InputError, NumericalError
from .tinynet import TinyNet

__all__ = [
    "TinyNet", "gradient", "hessian_exact", "hessian_vector_product", "hutchinson_trace",
    "gauss_newton", "check_trace_bound", "trace_bound_check", "analyze_hessian",
    "SensitivityReport", "LayerSensitivity", "TraceBoundResult",
]

MAX_EXACT_WEIGHTS = 512


def gradient(net: TinyNet, batch) -> list[np.ndarray]:
    """Exact gradient of the mean loss w.r.t. every layer's weight matrix."""
    x, y = batch
    return net.backward(x, y)[1]


def _layer_grad(net, layer, batch):
    x, y = batch
    if not 0 <= layer < len(net.weights):
        raise InputError(f"no layer {layer}")

    def grad(flat):
        g = net.with_layer_weights(layer, flat).backward(x, y)[1][layer].ravel()
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in layer {net.layers[layer].name}",
                                 layer=net.layers[layer].name)
        return g

    return net.weights[layer].ravel().copy(), grad


def hvp_step(w) -> float:
    return 1e-3 * (1.0 + float(np.max(np.abs(w))))


def hessian_vector_product(net: TinyNet, layer: int, batch, v, eps=None):
    w, grad = _layer_grad(net, layer, batch)
    eps = hvp_step(w) if eps is None else eps
    return (grad(w + eps * v) - grad(w - eps * v)) / (2.0 * eps)


def hessian_exact(net: TinyNet, layer: int, batch, symmetrize=True):
    """Brute-force Hessian of one layer's weights, column by column.

    Returns the symmetrized matrix ``(A + A^T) / 2``; pass
    ``symmetrize=False`` to get the raw finite-difference matrix ``A``.
    """
    w, grad = _layer_grad(net, layer, batch)
    d = w.size
    if d > MAX_EXACT_WEIGHTS:
        raise CapacityError(f"layer {net.layers[layer].name} has {d} weights; "
                            f"exact Hessian is limited to {MAX_EXACT_WEIGHTS}")
    eps = hvp_step(w)
    a = np.empty((d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = eps
        a[:, j] = (grad(w + e) - grad(w - e)) / (2.0 * eps)
    return 0.5 * (a + a.T) if symmetrize else a


def gauss_newton(net: TinyNet, layer: int, batch):
    """Gauss-Newton curvature ``mean_i J_i^T H_out,i J_i``; PSD by construction."""
    x, y = batch
    if net.weights[layer].size > MAX_EXACT_WEIGHTS:
        raise CapacityError(f"layer {net.layers[layer].name} too large for a dense curvature matrix")
    jac, z = net.output_jacobian(x, layer)
    n, k, _ = jac.shape
    if net.loss == "mse":
        return 2.0 * np.einsum("nkd,nke->de", jac, jac) / n
    z = z - z.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    hout = np.einsum("nk,kl->nkl", p, np.eye(k)) - p[:, :, None] * p[:, None, :]
    return np.einsum("nkd,nkl,nle->de", jac, hout, jac) / n


def hutchinson_trace(net: TinyNet, layer: int, batch, probes: int = 100, seed=0) -> float:
    if probes < 1:
        raise ConfigurationError("probes must be >= 1")
    w, grad = _layer_grad(net, layer, batch)
    eps = hvp_step(w)
    rng = np.random.default_rng(seed)
    total = 0.0
    for _ in range(probes):
        v = rng.choice((-1.0, 1.0), size=w.size)
        hv = (grad(w + eps * v) - grad(w - eps * v)) / (2.0 * eps)
        total += float(v @ hv)
    est = total / probes
    if not np.isfinite(est):
        raise NumericalError(f"non-finite trace estimate in layer {net.layers[layer].name}",
                             layer=net.layers[layer].name)
    return est


@dataclass(frozen=True)
class TraceBoundResult:
    """Quadratic-form check of ``0.5 dw^T H dw <= 0.5 Tr(H)`` over unit ``dw``.

    ``max_ratio`` is the largest sampled ``q / (0.5 Tr H)``; ``worst_ratio`` is
    the exact supremum ``lambda_max / Tr H``.  ``applicable`` is false when
    ``Tr H <= 0``, in which case nothing is counted.
    """

    max_ratio: float
    violations: int
    trials: int
    trace: float
    worst_ratio: float
    applicable: bool = True


def check_trace_bound(hessian, trials: int = 100_000, seed=0, chunk: int = 20_000) -> TraceBoundResult:
    h = np.asarray(hessian, dtype=float)
    h = 0.5 * (h + h.T)
    tr = float(np.trace(h))
    if tr <= 0:
        return TraceBoundResult(float("nan"), 0, trials, tr, float("nan"), applicable=False)
    bound = 0.5 * tr
    rng = np.random.default_rng(seed)
    d = h.shape[0]
    max_ratio, violations, done = -np.inf, 0, 0
    while done < trials:
        m = min(chunk, trials - done)
        dw = rng.standard_normal((m, d))
        dw /= np.linalg.norm(dw, axis=1, keepdims=True)
        q = 0.5 * np.einsum("md,de,me->m", dw, h, dw)
        max_ratio = max(max_ratio, float(q.max() / bound))
        violations += int(np.count_nonzero(q > bound * (1 + 1e-9)))
        done += m
    worst = float(np.linalg.eigvalsh(h)[-1]) / tr
    return TraceBoundResult(max_ratio, violations, trials, tr, worst)


def trace_bound_check(net: TinyNet, layer: int, batch, trials: int = 100_000, seed=0,
                 curvature: str = "exact") -> TraceBoundResult:
    """Sample unit perturbations of one layer and test them against the trace bound.

    ``curvature="exact"`` uses :func:`hessian_exact` (PSD for linear models
    with MSE); ``"gauss_newton"`` uses the PSD Gauss-Newton surrogate, the
    setting to use on trained nonlinear nets.
    """
    if curvature == "exact":
        h = hessian_exact(net, layer, batch)
    elif curvature == "gauss_newton":
        h = gauss_newton(net, layer, batch)
    else:
        raise ConfigurationError(f"unknown curvature {curvature!r}")
    return check_trace_bound(h, trials, seed)


@dataclass(frozen=True)
class LayerSensitivity:
    name: str
    weight_count: int
    raw_trace: float
    normalized_trace: float
    cluster_label: int


@dataclass(frozen=True)
class SensitivityReport:
    layers: tuple[LayerSensitivity, ...]
    estimator: str
    probe_count: int
    k: int
    centroids: tuple[float, ...]
    samples: int = 0
    seed: int = 0

    def normalized_by_name(self) -> dict[str, float]:
        return {s.name: s.normalized_trace for s in self.layers}

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "estimator": self.estimator,
            "probe_count": self.probe_count,
            "samples": self.samples,
            "seed": self.seed,
            "k": self.k,
            "centroids": list(self.centroids),
            "layers": [asdict(s) for s in self.layers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SensitivityReport":
        if d.get("schema_version") != 1:
            raise ConfigurationError("unsupported sensitivity report schema")
        return cls(tuple(LayerSensitivity(**s) for s in d["layers"]), d["estimator"],
                   d["probe_count"], d["k"], tuple(d["centroids"]), d.get("samples", 0),
                   d.get("seed", 0))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "SensitivityReport":
        return cls.from_dict(json.loads(Path(path).read_text()))


def analyze_hessian(net: TinyNet, dataset, k: int = 4, estimator: str = "hutchinson",
                    probes: int = 100, samples: int = 512, seed=0) -> SensitivityReport:
    """Normalized Hessian trace per layer, clustered into ``k`` ranked groups.

    The first ``samples`` rows of ``dataset = (x, y)`` back the estimate.
    Cluster label 0 is the group with the largest mean normalized trace.
    """
    n_layers = len(net.layers)
    if not 1 <= k <= n_layers:
        raise ConfigurationError(f"k={k} must be between 1 and the number of layers ({n_layers})")
    x, y = dataset
    batch = (np.asarray(x)[:samples], np.asarray(y)[:samples])
    raw = []
    for i in range(n_layers):
        if estimator == "hutchinson":
            raw.append(hutchinson_trace(net, i, batch, probes, seed=(seed, i)))
        elif estimator == "exact":
            raw.append(float(np.trace(hessian_exact(net, i, batch))))
        else:
            raise ConfigurationError(f"unknown estimator {estimator!r}")
    norm = [r / layer.weight_count for r, layer in zip(raw, net.layers)]
    clustering = k_means_and_sort(norm, k)
    entries = tuple(
        LayerSensitivity(layer.name, layer.weight_count, r, nt, lab)
        for layer, r, nt, lab in zip(net.layers, raw, norm, clustering.labels)
    )
    return SensitivityReport(entries, estimator, probes if estimator == "hutchinson" else 0,
                             clustering.k, clustering.centroids, len(batch[0]),
                             seed if isinstance(seed, int) else 0)
