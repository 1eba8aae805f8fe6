import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kmtpe.errors import ConfigurationError, InputError
from kmtpe.tpe import (SurrogatePair, TpeParams, classic_threshold, fit_surrogate, k_for,
                       kmeans_split, propose)

DIMS = [(8, 6, 4, 3, 2), (0.75, 0.875, 1.0, 1.125, 1.25)]


def test_laplace_smoothing_formula():
    (p,) = fit_surrogate([(8,)], [(8, 6)])
    np.testing.assert_allclose(p, [2 / 3, 1 / 3])
    (p,) = fit_surrogate([], [(8, 6, 4, 3, 2)])
    np.testing.assert_allclose(p, [0.2] * 5)
    (p,) = fit_surrogate([(2,)] * 100, [(8, 6, 4, 3, 2)])
    assert p[-1] == pytest.approx(101 / 105)


def test_unknown_value_rejected():
    with pytest.raises(InputError):
        fit_surrogate([(5,)], [(8, 6)])
    with pytest.raises(ConfigurationError):
        fit_surrogate([], [(8, 6)], mode="kde")


@given(st.lists(st.tuples(st.sampled_from(DIMS[0]), st.sampled_from(DIMS[1])), max_size=30),
       st.sampled_from(["categorical", "ordinal_gaussian"]))
def test_surrogate_probabilities_valid(points, mode):
    for p in fit_surrogate(points, DIMS, mode):
        assert np.all(p > 0)
        assert abs(p.sum() - 1.0) < 1e-12


def test_ordinal_gaussian_concentrates_near_observations():
    (p,) = fit_surrogate([(8,)] * 20 + [(6,)] * 20, [(8, 6, 4, 3, 2)], mode="ordinal_gaussian")
    assert p[0] + p[1] > p[3] + p[4]


def test_equal_models_return_first_sample():
    pair = SurrogatePair.fit([(8, 1.0)], [(8, 1.0)], DIMS)
    # propose draws each dimension's column in one call, so replay that order
    rng = np.random.default_rng(5)
    cols = [rng.choice(5, size=24, p=p) for p in pair.l_model]
    expected = tuple(DIMS[j][cols[j][0]] for j in range(2))
    assert propose(pair, 24, seed=5) == expected


def test_proposal_follows_concentrated_l():
    good = [(8, 1.0)] * 40
    pair = SurrogatePair.fit(good, [], DIMS)
    assert pair.l_model[0][0] > 0.88
    hits = sum(propose(pair, 1, seed=s)[0] == 8 for s in range(2000))
    assert hits / 2000 >= pair.l_model[0][0] - 0.03


def test_argmax_matches_enumeration():
    dims = [(0, 1, 2), (0, 1)]
    l_tab = [np.array([0.5, 0.3, 0.2]), np.array([0.4, 0.6])]
    g_tab = [np.array([0.6, 0.1, 0.3]), np.array([0.7, 0.3])]
    pair = SurrogatePair(tuple(l_tab), tuple(g_tab), tuple(dims))
    scores = {(a, b): math.log(l_tab[0][a] / g_tab[0][a]) + math.log(l_tab[1][b] / g_tab[1][b])
              for a, b in itertools.product(range(3), range(2))}
    best = max(scores, key=scores.get)
    # with many candidates every cell is sampled, so the argmax is the global one
    assert propose(pair, 500, seed=0) == best


def test_exclude_skips_seen_points():
    dims = [(0, 1), (0, 1)]
    pair = SurrogatePair(tuple(np.array([0.5, 0.5]) for _ in dims),
                         tuple(np.array([0.5, 0.5]) for _ in dims), tuple(dims))
    first = propose(pair, 50, seed=1)
    assert propose(pair, 50, seed=1, exclude={first}) != first
    everything = set(itertools.product((0, 1), repeat=2))
    assert propose(pair, 50, seed=1, exclude=everything) == first


@given(st.integers(0, 10_000))
def test_proposal_inside_support(seed):
    rng = np.random.default_rng(seed)
    pts = [tuple(rng.choice(d) for d in DIMS) for _ in range(10)]
    pair = SurrogatePair.fit(pts[:3], pts[3:], DIMS)
    x = propose(pair, 24, seed=seed)
    assert all(v in d for v, d in zip(x, DIMS))


def test_equal_models_reproduce_l_statistically():
    pair = SurrogatePair.fit([(8, 1.0), (6, 0.75), (8, 1.25)], [(8, 1.0), (6, 0.75), (8, 1.25)], DIMS)
    rng = np.random.default_rng(0)
    draws = np.array([[DIMS[j].index(v) for j, v in enumerate(propose(pair, 24, rng))]
                      for _ in range(10_000)])
    for j in range(2):
        freq = np.bincount(draws[:, j], minlength=5) / len(draws)
        assert np.max(np.abs(freq - pair.l_model[j])) <= 0.03


def test_classic_quantile_split():
    ys = list(range(1, 11))
    good, bad = classic_threshold(ys, 0.25)
    assert float(np.quantile(ys, 0.75)) == 7.75
    assert [ys[i] for i in good] == [8, 9, 10]
    assert sorted(good + bad) == list(range(10))


def test_classic_flat_and_limit():
    good, bad = classic_threshold([0.5] * 6, 0.25)
    assert len(good) == 6 and bad == []
    pair = SurrogatePair.fit([(8, 1.0)], [], DIMS)
    np.testing.assert_allclose(pair.g_model[0], 0.2)
    good, _ = classic_threshold([3.0, 1.0, 2.0], 1e-9)
    assert good == [0]
    with pytest.raises(InputError):
        classic_threshold([], 0.25)


def test_k_for_reference_values():
    assert k_for(0.25) == 4
    c = 0.25 * 0.98 ** 10
    assert c == pytest.approx(0.2042, abs=1e-4)
    assert k_for(c) == math.ceil(1 / c) == 5


def test_kmeans_split_first_iteration_uses_four_clusters():
    ys = list(np.random.default_rng(0).normal(size=20))
    good, bad, k = kmeans_split(ys, list(range(20)), 0.25)
    assert k == 4
    assert not set(good) & set(bad)


def test_kmeans_split_clamps_to_two():
    ys = [0.1, 0.9, 0.1, 0.9, 0.9]
    good, bad, k = kmeans_split(ys, list("abcde"), 0.01)
    assert k == 2
    assert sorted(good + bad) == list("abcde")
    with pytest.raises(InputError):
        kmeans_split([1.0], ["a"], 0.25)


@given(st.lists(st.floats(-10, 10), min_size=2, max_size=40), st.floats(0.01, 1.0))
def test_kmeans_split_disjoint(ys, c):
    good, bad, k = kmeans_split(ys, list(range(len(ys))), c)
    assert not set(good) & set(bad)
    assert good
    assert 1 <= k <= max(2, k_for(c))


def test_k_non_decreasing_under_annealing():
    c, ks = 0.25, []
    for _ in range(200):
        ks.append(k_for(c))
        c *= 0.98
    assert ks == sorted(ks)


def test_params_validation():
    with pytest.raises(ConfigurationError):
        TpeParams(alpha=1.5)
    with pytest.raises(ConfigurationError):
        TpeParams(n0=10, n=5)
    with pytest.raises(ConfigurationError):
        TpeParams(surrogate="kde")
    assert TpeParams(n0=20, n=300, maxiters=100).surrogate_iterations == 100
