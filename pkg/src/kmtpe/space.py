"""Joint bit-width x layer-width search space.

A :class:`SearchSpace` holds, for every layer, an ordered set of candidate
bit-widths and an ordered set of width multipliers.  A :class:`Configuration`
picks one of each per layer.  The optimizers in :mod:`kmtpe.tpe` see the space
as a flat list of categorical dimensions, interleaved per layer as
``(bits_0, width_0, bits_1, width_1, ...)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import ConfigurationError

BIT_CHOICES = (8, 6, 4, 3, 2)
WIDTH_CHOICES = (0.75, 0.875, 1.0, 1.125, 1.25)
DEFAULT_SUBSETS = ((8, 6), (6, 4, 3), (4, 3, 2), (3, 2))

LAYER_KINDS = ("conv2d", "dense")


@dataclass(frozen=True)
class LayerShape:
    """Static shape of one weight layer.

    ``source`` is the index of the layer whose output feeds this one; ``None``
    means the previous layer in the list and ``-1`` the network input.  It only
    matters when width multipliers change channel counts.
    """

    name: str
    kind: str
    in_channels: int
    out_channels: int
    kernel_h: int = 1
    kernel_w: int = 1
    out_h: int = 1
    out_w: int = 1
    groups: int = 1
    source: int | None = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigurationError(f"layer {self.name!r}: unknown kind {self.kind!r}")
        for attr in ("in_channels", "out_channels", "kernel_h", "kernel_w", "out_h", "out_w", "groups"):
            if int(getattr(self, attr)) < 1:
                raise ConfigurationError(f"layer {self.name!r}: {attr} must be >= 1")
        if self.kind == "dense" and (self.kernel_h, self.kernel_w, self.out_h, self.out_w) != (1, 1, 1, 1):
            raise ConfigurationError(f"layer {self.name!r}: dense layers are 1x1 with 1x1 output")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ConfigurationError(f"layer {self.name!r}: channels not divisible by groups")

    @property
    def is_depthwise(self) -> bool:
        return self.groups > 1 and self.groups == self.in_channels == self.out_channels

    @property
    def patch_size(self) -> int:
        """Entries in one input patch (the inner dimension of the dot product)."""
        return self.kernel_h * self.kernel_w * (self.in_channels // self.groups)

    @property
    def weight_count(self) -> int:
        return self.patch_size * self.out_channels

    @property
    def mac_count(self) -> int:
        return self.weight_count * self.out_h * self.out_w

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "kind": self.kind,
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "kernel_h": self.kernel_h,
            "kernel_w": self.kernel_w,
            "out_h": self.out_h,
            "out_w": self.out_w,
        }
        if self.groups != 1:
            d["groups"] = self.groups
        if self.source is not None:
            d["source"] = self.source
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LayerShape":
        allowed = {
            "name", "kind", "in_channels", "out_channels", "kernel_h",
            "kernel_w", "out_h", "out_w", "groups", "source",
        }
        unknown = set(d) - allowed
        if unknown:
            raise ConfigurationError(f"unknown layer keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from None


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def scale_layers(layers: Sequence[LayerShape], widths: Sequence[float]) -> list[LayerShape]:
    """Apply per-layer width multipliers to filter counts.

    Each layer's out_channels becomes ``max(1, round(out * width))``; the
    consumer's in_channels follows its source layer.  The last layer keeps its
    out_channels (class count) and depthwise layers keep their channel count
    tied to their input, so their own multiplier has no effect.
    """
    if len(widths) != len(layers):
        raise ConfigurationError(f"{len(widths)} widths for {len(layers)} layers")
    scaled: list[LayerShape] = []
    last = len(layers) - 1
    for i, (layer, w) in enumerate(zip(layers, widths)):
        src = i - 1 if layer.source is None else layer.source
        cin = layer.in_channels if src < 0 else scaled[src].out_channels
        if layer.is_depthwise:
            scaled.append(replace(layer, in_channels=cin, out_channels=cin, groups=cin))
            continue
        if i == last:
            cout = layer.out_channels
        else:
            cout = max(1, _round_half_up(layer.out_channels * w))
        if layer.groups != 1 and (cin % layer.groups or cout % layer.groups):
            raise ConfigurationError(f"layer {layer.name!r}: scaled channels break grouping")
        scaled.append(replace(layer, in_channels=cin, out_channels=cout))
    return scaled


@dataclass(frozen=True)
class Configuration:
    """One (bit-width, width multiplier) choice per layer."""

    bits: tuple[int, ...]
    widths: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "bits", tuple(int(b) for b in self.bits))
        object.__setattr__(self, "widths", tuple(float(w) for w in self.widths))
        if len(self.bits) != len(self.widths):
            raise ConfigurationError("bits and widths must have one entry per layer")

    @classmethod
    def uniform(cls, n_layers: int, bits: int, width: float = 1.0) -> "Configuration":
        return cls((bits,) * n_layers, (width,) * n_layers)

    @classmethod
    def from_point(cls, point: Sequence) -> "Configuration":
        return cls(tuple(point[0::2]), tuple(point[1::2]))

    @classmethod
    def parse(cls, bits: str, widths: str) -> "Configuration":
        """Build from comma-separated rows such as ``"8, 3, 3"`` / ``"1, 1, 0.75"``."""
        try:
            b = [int(s) for s in bits.split(",")]
            w = [float(s) for s in widths.split(",")]
        except ValueError as exc:
            raise ConfigurationError(f"cannot parse configuration row: {exc}") from None
        return cls(tuple(b), tuple(w))

    def as_point(self) -> tuple:
        out: list = []
        for b, w in zip(self.bits, self.widths):
            out += [b, w]
        return tuple(out)

    def to_dict(self) -> dict:
        return {"bits": list(self.bits), "widths": list(self.widths)}

    @classmethod
    def from_dict(cls, d: dict) -> "Configuration":
        if set(d) != {"bits", "widths"}:
            raise ConfigurationError("configuration needs exactly 'bits' and 'widths'")
        return cls(tuple(d["bits"]), tuple(d["widths"]))


@dataclass(frozen=True)
class SearchSpace:
    layers: tuple[LayerShape, ...]
    bit_candidates: tuple[tuple[int, ...], ...]
    width_candidates: tuple[tuple[float, ...], ...] = field(default=())

    def __post_init__(self):
        layers = tuple(self.layers)
        n = len(layers)
        if n == 0:
            raise ConfigurationError("search space has no layers")
        widths = self.width_candidates or (WIDTH_CHOICES,) * n
        if len(self.bit_candidates) != n or len(widths) != n:
            raise ConfigurationError("need one bit set and one width set per layer")
        bits_norm, widths_norm = [], []
        for layer, bset, wset in zip(layers, self.bit_candidates, widths):
            bset = tuple(sorted({int(b) for b in bset}, reverse=True))
            wset = tuple(sorted({float(w) for w in wset}))
            if not bset or not wset:
                raise ConfigurationError(f"layer {layer.name!r}: empty candidate set")
            if not set(bset) <= set(BIT_CHOICES):
                raise ConfigurationError(
                    f"layer {layer.name!r}: bit-widths {bset} not within {BIT_CHOICES}")
            if wset[0] <= 0:
                raise ConfigurationError(f"layer {layer.name!r}: width multipliers must be > 0")
            bits_norm.append(bset)
            widths_norm.append(wset)
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "bit_candidates", tuple(bits_norm))
        object.__setattr__(self, "width_candidates", tuple(widths_norm))

    @classmethod
    def full(cls, layers: Sequence[LayerShape], bits=BIT_CHOICES, widths=WIDTH_CHOICES) -> "SearchSpace":
        n = len(layers)
        return cls(tuple(layers), (tuple(bits),) * n, (tuple(widths),) * n)

    @property
    def dimensions(self) -> list[tuple]:
        """Candidate values per flat dimension, interleaved per layer."""
        dims: list[tuple] = []
        for b, w in zip(self.bit_candidates, self.width_candidates):
            dims += [b, w]
        return dims

    def contains(self, config: Configuration) -> bool:
        if len(config.bits) != len(self.layers):
            return False
        return all(
            b in bset and w in wset
            for b, w, bset, wset in zip(config.bits, config.widths,
                                        self.bit_candidates, self.width_candidates)
        )

    def validate(self, config: Configuration) -> None:
        if not self.contains(config):
            raise ConfigurationError(f"configuration {config.to_dict()} is outside the search space")

    def to_dict(self) -> dict:
        return {
            "layers": [layer.to_dict() for layer in self.layers],
            "bit_candidates": [list(b) for b in self.bit_candidates],
            "width_candidates": [list(w) for w in self.width_candidates],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SearchSpace":
        layers = tuple(LayerShape.from_dict(x) for x in d["layers"])
        return cls(layers, tuple(map(tuple, d["bit_candidates"])),
                   tuple(map(tuple, d["width_candidates"])))


def space_size(space: SearchSpace) -> int:
    """Number of distinct configurations, as an exact integer."""
    return math.prod(len(b) * len(w) for b, w in zip(space.bit_candidates, space.width_candidates))


def sample_randomly(space: SearchSpace, n0: int, seed) -> list[Configuration]:
    """Draw ``n0`` configurations, each coordinate uniform over its candidates.

    ``seed`` may be an int or a :class:`numpy.random.Generator`; a generator is
    advanced in place.
    """
    if n0 < 1:
        raise ConfigurationError("n0 must be >= 1")
    rng = np.random.default_rng(seed)
    dims = space.dimensions
    if any(len(d) == 0 for d in dims):
        raise ConfigurationError("empty candidate set")
    idx = np.column_stack([rng.integers(len(d), size=n0) for d in dims])
    return [Configuration.from_point([dims[j][i] for j, i in enumerate(row)]) for row in idx]


def build_pruned_space(layers: Sequence[LayerShape], report, k: int,
                       subsets: Sequence[Sequence[int]] = DEFAULT_SUBSETS,
                       widths: Sequence[float] = WIDTH_CHOICES,
                       exempt_first_last: bool = False) -> SearchSpace:
    """Assign candidate bit-width subsets by Hessian-trace cluster rank.

    Normalized traces from ``report`` are clustered into ``k`` groups (fewer if
    there are fewer distinct traces); the cluster with the largest centroid
    gets ``subsets[0]``, the next ``subsets[1]`` and so on.  With
    ``exempt_first_last`` the first and last layers are pinned to
    ``subsets[0]`` regardless of their trace.
    """
    from .cluster import k_means_and_sort

    if k < 1 or k != len(subsets):
        raise ConfigurationError(f"k={k} but {len(subsets)} bit subsets were given")
    if any(len(s) == 0 for s in subsets):
        raise ConfigurationError("bit subsets must be non-empty")
    traces = report.normalized_by_name()
    missing = [layer.name for layer in layers if layer.name not in traces]
    if missing:
        raise ConfigurationError(f"layers missing from sensitivity report: {missing}")
    values = [traces[layer.name] for layer in layers]
    clustering = k_means_and_sort(values, k)
    bits = [tuple(subsets[label]) for label in clustering.labels]
    if exempt_first_last:
        bits[0] = bits[-1] = tuple(subsets[0])
    n = len(layers)
    return SearchSpace(tuple(layers), tuple(bits), (tuple(widths),) * n)
