import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import brute_force_kmeans
from kmtpe.errors import ConfigurationError
from kmtpe.sensitivity import LayerSensitivity, SensitivityReport
from kmtpe.space import (BIT_CHOICES, DEFAULT_SUBSETS, WIDTH_CHOICES, Configuration, LayerShape,
                         SearchSpace, build_pruned_space, sample_randomly, scale_layers, space_size)


def dense_layers(n, width=8):
    return [LayerShape(f"fc{i}", "dense", width, width) for i in range(n)]


def report_for(layers, traces):
    entries = tuple(LayerSensitivity(layer.name, layer.weight_count, t * layer.weight_count, t, 0)
                    for layer, t in zip(layers, traces))
    return SensitivityReport(entries, "exact", 0, 1, (0.0,))


def test_layer_shape_derived_counts():
    conv = LayerShape("c", "conv2d", 16, 32, 3, 3, 8, 8)
    assert conv.weight_count == 16 * 32 * 9
    assert conv.mac_count == conv.weight_count * 64
    assert conv.patch_size == 144


def test_layer_shape_round_trip_and_unknown_keys():
    layer = LayerShape("dw", "conv2d", 32, 32, 3, 3, 4, 4, groups=32, source=0)
    assert LayerShape.from_dict(layer.to_dict()) == layer
    with pytest.raises(ConfigurationError):
        LayerShape.from_dict({**layer.to_dict(), "stride": 2})


def test_dense_layer_must_be_1x1():
    with pytest.raises(ConfigurationError):
        LayerShape("d", "dense", 4, 4, kernel_h=3)


def test_space_normalizes_order():
    sp = SearchSpace(tuple(dense_layers(1)), ((2, 8, 4),), ((1.25, 0.75),))
    assert sp.bit_candidates == ((8, 4, 2),)
    assert sp.width_candidates == ((0.75, 1.25),)


def test_space_rejects_foreign_bits_and_empty_sets():
    with pytest.raises(ConfigurationError):
        SearchSpace(tuple(dense_layers(1)), ((16,),))
    with pytest.raises(ConfigurationError):
        SearchSpace(tuple(dense_layers(1)), ((),))


def test_space_size_products():
    layers = dense_layers(2)
    sp = SearchSpace(tuple(layers), ((8, 6), (3, 2)))
    assert space_size(sp) == 100
    assert space_size(SearchSpace.full(dense_layers(18))) == 25 ** 18
    pruned = SearchSpace(tuple(dense_layers(18)), ((8, 6),) * 18)
    assert space_size(pruned) == 10 ** 18


def test_interleaved_dimensions_and_point_round_trip():
    sp = SearchSpace(tuple(dense_layers(2)), ((8, 6), (3, 2)))
    assert sp.dimensions[0] == (8, 6) and sp.dimensions[1] == WIDTH_CHOICES
    cfg = Configuration((8, 2), (1.0, 0.75))
    assert Configuration.from_point(cfg.as_point()) == cfg
    assert sp.contains(cfg)
    assert not sp.contains(Configuration((4, 2), (1.0, 0.75)))
    with pytest.raises(ConfigurationError):
        sp.validate(Configuration((4, 2), (1.0, 0.75)))


def test_space_json_round_trip():
    sp = SearchSpace(tuple(dense_layers(3)), ((8, 6), (6, 4, 3), (3, 2)))
    assert SearchSpace.from_dict(json.loads(json.dumps(sp.to_dict()))) == sp


def test_configuration_parse_table_rows():
    cfg = Configuration.parse("8, 3, 3", "1, 1, 0.75")
    assert cfg.bits == (8, 3, 3) and cfg.widths == (1.0, 1.0, 0.75)
    with pytest.raises(ConfigurationError):
        Configuration.parse("8, x", "1, 1")
    with pytest.raises(ConfigurationError):
        Configuration((8, 8), (1.0,))


def test_sampling_singletons_and_determinism():
    sp = SearchSpace(tuple(dense_layers(3)), ((8,),) * 3, ((1.0,),) * 3)
    assert len(set(sample_randomly(sp, 7, 0))) == 1
    full = SearchSpace.full(dense_layers(4))
    assert sample_randomly(full, 10, 42) == sample_randomly(full, 10, 42)
    with pytest.raises(ConfigurationError):
        sample_randomly(full, 0, 0)


def test_sampling_frequency_binomial():
    sp = SearchSpace(tuple(dense_layers(1)), ((8, 6),))
    draws = sample_randomly(sp, 10_000, 1)
    freq = np.mean([c.bits[0] == 8 for c in draws])
    # 4 standard errors of a fair coin at n = 10^4 is 0.02
    assert abs(freq - 0.5) <= 0.02


@given(st.integers(0, 2**31 - 1), st.integers(1, 5))
def test_samples_validate(seed, n_layers):
    rng = np.random.default_rng(seed)
    bits = tuple(tuple(rng.choice(BIT_CHOICES, size=rng.integers(1, 6), replace=False)) for _ in range(n_layers))
    sp = SearchSpace(tuple(dense_layers(n_layers)), bits)
    for cfg in sample_randomly(sp, 5, seed):
        sp.validate(cfg)


def test_pruned_space_default_subsets():
    layers = dense_layers(4)
    sp = build_pruned_space(layers, report_for(layers, [9.0, 5.0, 1.0, 0.1]), 4)
    assert sp.bit_candidates == DEFAULT_SUBSETS
    assert sp.bit_candidates[0] == (8, 6)
    assert all(w == WIDTH_CHOICES for w in sp.width_candidates)


def test_pruned_space_single_cluster():
    layers = dense_layers(3)
    sp = build_pruned_space(layers, report_for(layers, [1.0, 2.0, 3.0]), 1, subsets=((8,),))
    assert sp.bit_candidates == ((8,),) * 3


def test_pruned_space_three_layers_matches_oracle():
    layers = dense_layers(3)
    traces = [10.0, 0.1, 0.1]
    _, labels = brute_force_kmeans(traces, 2)
    sp = build_pruned_space(layers, report_for(layers, traces), 2, subsets=((8, 6), (3, 2)))
    expected = tuple([(8, 6), (3, 2)][lab] for lab in labels)
    assert sp.bit_candidates == expected == ((8, 6), (3, 2), (3, 2))


def test_pruned_space_errors():
    layers = dense_layers(3)
    with pytest.raises(ConfigurationError):
        build_pruned_space(layers, report_for(layers, [1, 2, 3]), 3, subsets=((8,), (6,)))
    with pytest.raises(ConfigurationError):
        build_pruned_space(layers, report_for(layers[:2], [1, 2]), 2, subsets=((8,), (6,)))


def test_pruned_space_first_last_exemption():
    layers = dense_layers(4)
    sp = build_pruned_space(layers, report_for(layers, [0.1, 9.0, 9.0, 0.1]), 2,
                            subsets=((8, 6), (3, 2)), exempt_first_last=True)
    assert sp.bit_candidates[0] == sp.bit_candidates[-1] == (8, 6)


@given(st.lists(st.floats(0.0, 100.0), min_size=2, max_size=7), st.randoms(use_true_random=False))
def test_pruned_space_permutation_equivariant(traces, rnd):
    layers = dense_layers(len(traces))
    k = min(2, len(traces))
    subsets = ((8, 6), (3, 2))[:k]
    base = build_pruned_space(layers, report_for(layers, traces), k, subsets)
    perm = list(range(len(traces)))
    rnd.shuffle(perm)
    player = [layers[i] for i in perm]
    permuted = build_pruned_space(player, report_for(player, [traces[i] for i in perm]), k, subsets)
    assert permuted.bit_candidates == tuple(base.bit_candidates[i] for i in perm)


@given(st.lists(st.floats(0.0, 100.0), min_size=4, max_size=8))
def test_pruned_space_never_larger(traces):
    layers = dense_layers(len(traces))
    pruned = build_pruned_space(layers, report_for(layers, traces), 4)
    assert space_size(pruned) < space_size(SearchSpace.full(layers))
    same = build_pruned_space(layers, report_for(layers, traces), 4, subsets=(BIT_CHOICES,) * 4)
    assert space_size(same) == space_size(SearchSpace.full(layers))


def test_scale_layers_chains_channels():
    layers = [LayerShape("a", "dense", 2, 16), LayerShape("b", "dense", 16, 16),
              LayerShape("c", "dense", 16, 4)]
    scaled = scale_layers(layers, (1.25, 0.75, 0.75))
    assert [(s.in_channels, s.out_channels) for s in scaled] == [(2, 20), (20, 12), (12, 4)]


def test_scale_layers_rounds_half_up_with_floor_of_one():
    layers = [LayerShape("a", "dense", 3, 2), LayerShape("b", "dense", 2, 5), LayerShape("c", "dense", 5, 1)]
    scaled = scale_layers(layers, (0.75, 0.1, 1.0))
    # 2 * 0.75 = 1.5 rounds up to 2; 5 * 0.1 = 0.5 rounds up to 1
    assert scaled[0].out_channels == 2 and scaled[1].out_channels == 1


def test_scale_layers_depthwise_follows_input():
    layers = [LayerShape("pw", "conv2d", 3, 32), LayerShape("dw", "conv2d", 32, 32, 3, 3, groups=32),
              LayerShape("fc", "dense", 32, 10)]
    scaled = scale_layers(layers, (1.25, 0.75, 1.0))
    assert scaled[1].in_channels == scaled[1].out_channels == scaled[1].groups == 40


def test_scale_layers_source_follows_named_layer():
    layers = [LayerShape("stem", "conv2d", 3, 16), LayerShape("conv", "conv2d", 16, 32),
              LayerShape("down", "conv2d", 16, 32, source=0), LayerShape("fc", "dense", 32, 10)]
    scaled = scale_layers(layers, (1.25, 1.0, 1.0, 1.0))
    assert scaled[2].in_channels == 20
