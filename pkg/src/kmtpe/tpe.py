"""Tree-structured Parzen estimator over categorical dimensions.

Every search dimension here is a finite ordered set, so each surrogate is a
product of per-dimension categorical distributions.  Two ways to split
observed trials into good and bad sets are provided:

* :func:`classic_threshold` - one quantile threshold on the objective;
* :func:`kmeans_split` - k-means on the objective values, the top cluster
  feeding ``l(x)`` and the bottom cluster ``g(x)``, middle clusters dropped.

Points are plain tuples with one entry per dimension; ``dims`` is the list of
candidate tuples (see :attr:`kmtpe.space.SearchSpace.dimensions`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .cluster import k_means_and_sort, top_bottom
from .errors import ConfigurationError, InputError

SMOOTHING = 1.0


@dataclass(frozen=True)
class TpeParams:
    n0: int = 20
    n: int = 100
    c0: float = 0.25
    alpha: float = 0.98
    maxiters: int = 100
    n_ei_candidates: int = 24
    gamma: float = 0.25
    anneal_every: int = 1
    surrogate: str = "categorical"
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ConfigurationError("alpha must be in (0, 1]")
        if not 0 < self.c0 <= 1:
            raise ConfigurationError("c0 must be in (0, 1]")
        if not 0 < self.gamma < 1:
            raise ConfigurationError("gamma must be in (0, 1)")
        if self.n0 < 1 or self.n < self.n0:
            raise ConfigurationError("need n >= n0 >= 1")
        if self.n_ei_candidates < 1 or self.anneal_every < 1:
            raise ConfigurationError("n_ei_candidates and anneal_every must be >= 1")
        if self.surrogate not in ("categorical", "ordinal_gaussian"):
            raise ConfigurationError(f"unknown surrogate {self.surrogate!r}")

    @property
    def surrogate_iterations(self) -> int:
        return min(self.n - self.n0, self.maxiters)


def _categorical(points, dims):
    out = []
    for j, values in enumerate(dims):
        counts = np.full(len(values), SMOOTHING)
        index = {v: i for i, v in enumerate(values)}
        for p in points:
            try:
                counts[index[p[j]]] += 1
            except KeyError:
                raise InputError(f"value {p[j]!r} not among candidates {values}") from None
        out.append(counts / counts.sum())
    return out


def _ordinal_gaussian(points, dims):
    """Gaussian over the numeric candidate values, renormalized on the support."""
    out = []
    for j, values in enumerate(dims):
        v = np.asarray(values, dtype=float)
        if not points:
            out.append(np.full(len(v), 1.0 / len(v)))
            continue
        obs = np.asarray([p[j] for p in points], dtype=float)
        span = (v.max() - v.min()) or 1.0
        # bandwidth floor: one candidate spacing on average
        sigma = max(float(obs.std()), span / max(len(v) - 1, 1))
        dens = np.exp(-0.5 * ((v - obs.mean()) / sigma) ** 2)
        # mix in the uniform prior with the weight Laplace smoothing would give it
        w = len(v) * SMOOTHING / (len(obs) + len(v) * SMOOTHING)
        p = (1 - w) * dens / dens.sum() + w / len(v)
        out.append(p / p.sum())
    return out


def fit_surrogate(points: Sequence[Sequence], dims: Sequence[Sequence], mode: str = "categorical"):
    """Per-dimension probabilities ``(count + 1) / (n + |V|)``.

    An empty ``points`` list gives the uniform distribution.  Returns a list
    of probability vectors aligned with ``dims``.
    """
    points = [tuple(p) for p in points]
    if mode == "categorical":
        return _categorical(points, dims)
    if mode == "ordinal_gaussian":
        return _ordinal_gaussian(points, dims)
    raise ConfigurationError(f"unknown surrogate mode {mode!r}")


@dataclass(frozen=True)
class SurrogatePair:
    l_model: tuple
    g_model: tuple
    dims: tuple

    @classmethod
    def fit(cls, good, bad, dims, mode="categorical") -> "SurrogatePair":
        dims = tuple(tuple(d) for d in dims)
        return cls(tuple(fit_surrogate(good, dims, mode)), tuple(fit_surrogate(bad, dims, mode)), dims)

    def log_ratio(self, idx) -> np.ndarray:
        """``sum_d log l_d - log g_d`` for index matrix ``idx`` of shape (m, D)."""
        score = np.zeros(idx.shape[0])
        for j, (lp, gp) in enumerate(zip(self.l_model, self.g_model)):
            score += np.log(lp[idx[:, j]]) - np.log(gp[idx[:, j]])
        return score


def propose(pair: SurrogatePair, n_ei: int = 24, seed=0, exclude=None) -> tuple:
    """Sample ``n_ei`` candidates from ``l`` and return the best ``l/g`` one.

    Ties go to the earliest sample.  Candidates in ``exclude`` (typically the
    points already evaluated) are passed over unless every sample is excluded.
    ``seed`` may be a Generator.
    """
    rng = np.random.default_rng(seed)
    idx = np.column_stack([rng.choice(len(p), size=n_ei, p=p) for p in pair.l_model])
    score = pair.log_ratio(idx)
    points = [tuple(pair.dims[j][i] for j, i in enumerate(row)) for row in idx]
    if exclude:
        fresh = np.array([pt not in exclude for pt in points])
        if fresh.any():
            score = np.where(fresh, score, -np.inf)
    return points[int(np.argmax(score))]


def classic_threshold(objectives: Sequence[float], gamma: float = 0.25):
    """Indices with ``y >= quantile(Y, 1 - gamma)`` and the rest (maximization).

    The quantile uses linear interpolation between order statistics.
    """
    y = np.asarray(objectives, dtype=float)
    if y.size == 0:
        raise InputError("no objective values")
    if not 0 < gamma < 1:
        raise InputError("gamma must be in (0, 1)")
    yhat = float(np.quantile(y, 1.0 - gamma))
    good = [i for i, v in enumerate(y) if v >= yhat]
    bad = [i for i, v in enumerate(y) if v < yhat]
    return good, bad


def k_for(c: float) -> int:
    """``ceil(1 / c)`` with a guard against float noise just above an integer."""
    return max(1, math.ceil(1.0 / c - 1e-9))


def kmeans_split(objectives: Sequence[float], items: Sequence, c: float):
    """Split ``items`` by k-means over ``objectives`` with ``k = ceil(1/c)``.

    ``k`` is clamped to ``[2, distinct values]``; with a single distinct value
    everything is desirable and nothing undesirable.  Returns
    ``(desirable, undesirable, k_used)``.
    """
    if len(objectives) != len(items):
        raise InputError("objectives and items must align")
    if len(objectives) < 2:
        raise InputError("need at least two observations")
    distinct = len(set(float(v) for v in objectives))
    k = min(max(k_for(c), 2), distinct)
    clustering = k_means_and_sort(objectives, k)
    good, bad = top_bottom(clustering, objectives, items)
    return good, bad, clustering.k
