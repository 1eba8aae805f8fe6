"""Exact one-dimensional k-means.

Optimal 1-D clusters are contiguous in sorted order, so the partition is found
by dynamic programming over the sorted distinct values (weighted by
multiplicity) instead of Lloyd iterations.  Equal values always land in the
same cluster.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InputError


@dataclass(frozen=True)
class Clustering:
    """Result of :func:`k_means_and_sort`.

    ``labels[i]`` indexes ``centroids``; label 0 is the cluster with the
    largest centroid (C1) and label ``k - 1`` the smallest (Ck).
    """

    labels: tuple[int, ...]
    centroids: tuple[float, ...]
    inertia: float

    @property
    def k(self) -> int:
        return len(self.centroids)

    def members(self, label: int) -> list[int]:
        return [i for i, lab in enumerate(self.labels) if lab == label]

    def sizes(self) -> list[int]:
        return [self.labels.count(j) for j in range(self.k)]


def _segment_costs(x, w):
    """Return a function giving weighted SSE of the sorted slice ``[i, j)``."""
    cw = np.concatenate([[0.0], np.cumsum(w)])
    cx = np.concatenate([[0.0], np.cumsum(w * x)])
    cxx = np.concatenate([[0.0], np.cumsum(w * x * x)])

    def cost(i, j):
        sw = cw[j] - cw[i]
        sx = cx[j] - cx[i]
        return np.maximum(cxx[j] - cxx[i] - sx * sx / sw, 0.0)

    return cost


def k_means_and_sort(values: Sequence[float], k: int) -> Clustering:
    """Optimal k-means partition of scalar ``values``.

    ``k`` is clamped to the number of distinct values so no cluster is empty.
    When two partitions have the same within-cluster sum of squares, the one
    that puts borderline values in the higher cluster wins.
    """
    vals = np.asarray(values, dtype=float)
    if vals.size == 0:
        raise InputError("cannot cluster an empty list")
    if not np.all(np.isfinite(vals)):
        raise InputError("values must be finite")
    if k < 1:
        raise InputError("k must be >= 1")
    distinct, inverse, counts = np.unique(vals, return_inverse=True, return_counts=True)
    m = distinct.size
    k = min(k, m)
    # centring keeps prefix sums well conditioned under large offsets
    shift = distinct.mean()
    scale = max(np.abs(distinct - shift).max(), 1e-300)
    x = (distinct - shift) / scale
    w = counts.astype(float)
    cost = _segment_costs(x, w)
    tol = 1e-12 * max(float(cost(0, m)), 1.0)

    # best[c, i]: min cost of the first i distinct values in c clusters
    best = np.full((k + 1, m + 1), np.inf)
    cut = np.zeros((k + 1, m + 1), dtype=int)
    best[0, 0] = 0.0
    for c in range(1, k + 1):
        for i in range(c, m + 1):
            j = np.arange(c - 1, i)
            tot = best[c - 1, j] + cost(j, i)
            lo = tot.min()
            # among near-ties take the smallest start: the upper cluster grows downward
            pick = int(np.flatnonzero(tot <= lo + tol)[0])
            best[c, i] = tot[pick]
            cut[c, i] = j[pick]

    bounds = [m]
    i = m
    for c in range(k, 0, -1):
        i = cut[c, i]
        bounds.append(i)
    bounds.reverse()  # ascending segment starts, bounds[0] == 0

    seg_of = np.empty(m, dtype=int)
    centroids = []
    for s in range(k):
        a, b = bounds[s], bounds[s + 1]
        seg_of[a:b] = s
        centroids.append(float(np.dot(distinct[a:b], counts[a:b]) / counts[a:b].sum()))
    # segments are ascending; label 0 is the top segment
    labels = (k - 1 - seg_of)[inverse]
    centroids = centroids[::-1]
    cent = np.asarray(centroids)
    inertia = float(np.sum((vals - cent[labels]) ** 2))
    return Clustering(tuple(int(v) for v in labels), tuple(centroids), inertia)


def top_bottom(clustering: Clustering, values: Sequence[float], items: Sequence):
    """Split ``items`` into those in C1 (desirable) and those in Ck (undesirable).

    Middle clusters go to neither side.  A single cluster counts as desirable
    only, so the two lists are always disjoint.
    """
    if len(values) != len(items) or len(items) != len(clustering.labels):
        raise InputError("values, items and labels must have equal length")
    last = clustering.k - 1
    desirable = [it for it, lab in zip(items, clustering.labels) if lab == 0]
    undesirable = [] if last == 0 else [it for it, lab in zip(items, clustering.labels) if lab == last]
    return desirable, undesirable

