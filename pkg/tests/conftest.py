import itertools
import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=500, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def brute_force_kmeans(values, k):
    """Exhaustive search over contiguous splits of the sorted distinct values.

    Returns ``(inertia, labels)`` with label 0 for the highest cluster.  Equal
    values share a cluster, matching the library's contract.
    """
    vals = np.asarray(values, dtype=float)
    distinct = np.unique(vals)
    m = distinct.size
    k = min(k, m)
    best = None
    for cuts in itertools.combinations(range(1, m), k - 1):
        bounds = (0, *cuts, m)
        seg = np.empty(m, dtype=int)
        for s in range(k):
            seg[bounds[s]:bounds[s + 1]] = s
        lab_of_val = dict(zip(distinct, k - 1 - seg))
        labels = np.array([lab_of_val[v] for v in vals])
        inertia = sum(float(np.sum((vals[labels == j] - vals[labels == j].mean()) ** 2))
                      for j in range(k))
        if best is None or inertia < best[0] - 1e-9:
            best = (inertia, labels)
    return best


@pytest.fixture(scope="session")
def blobs_template():
    from kmtpe.evalsim import SyntheticTask, pretrain

    task = SyntheticTask("blobs2d", seed=0)
    return task, pretrain(task, (16, 16), epochs=30, seed=0)
