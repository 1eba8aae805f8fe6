"""Hardware cost models for an output-stationary systolic array on DSP slices.

The array has ``rows`` (M) processing units, one per output channel in flight,
and ``cols`` (N) PEs per row, each consuming one patch entry per cycle.  A DSP
slice multiplies a 27-bit by an 18-bit operand into a 48-bit accumulator;
packing several low-bit operands into those ports lets one slice do several
multiplications per cycle (``packing_table``).

Latency per layer, with M' output channels, N' patch entries and P output
pixels::

    invocations = ceil(M'/M) * P
    cycles      = invocations * (ceil(N' / (N * mults_per_dsp)) + M + N - 1)

where ``M + N - 1`` is the pipeline fill of one invocation.  The energy and
throughput figures are cycle-count proxies, not calibrated models.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import CapacityError, ConfigurationError, InputError
from .space import Configuration, LayerShape, scale_layers

log = logging.getLogger(__name__)

BASELINE_BITS = 16

DEFAULT_PACKING = {
    8: (2, 0),
    6: (2, 0),
    4: (6, 2),
    3: (6, 2),
    2: (15, 8),
}


# ---------------------------------------------------------------------------
# operand packing


def signed_width(lo: int, hi: int) -> int:
    """Smallest two's-complement width holding every integer in ``[lo, hi]``."""
    s = 1
    while not (-(1 << (s - 1)) <= lo and hi <= (1 << (s - 1)) - 1):
        s += 1
    return s


def _operand_range(bits):
    return -(1 << (bits - 1)), (1 << (bits - 1)) - 1


def _packed_range(bits, count, stride):
    """Extreme values of sum(x_i * 2**(stride*i)) for ``count`` signed operands."""
    lo, hi = _operand_range(bits)
    place = sum(1 << (stride * i) for i in range(count))
    return lo * place, hi * place


def _fits(lo, hi, width):
    return -(1 << (width - 1)) <= lo and hi <= (1 << (width - 1)) - 1


def single_weight_stride(bits: int, count: int) -> int:
    """Field stride when ``count`` activations share one replicated weight."""
    return 2 * bits + math.ceil(math.log2(count)) + 1 if count > 1 else 2 * bits + 1


def conv_stride(bits: int, n_act: int, n_wt: int) -> int:
    """Field stride for the convolution layout: exact sum width plus a guard bit.

    Output field j of ``a * w`` collects up to ``min(n_act, n_wt)`` products.
    """
    lo, hi = _operand_range(bits)
    prods = (lo * lo, lo * hi, hi * hi)
    m = min(n_act, n_wt)
    return signed_width(m * min(prods), m * max(prods)) + 1


@dataclass(frozen=True)
class PackingCapacity:
    """Outcome of checking one ``packing_table`` row against the DSP ports.

    ``admitted`` is true when a convolution layout (``n_act`` activations in
    the wide port, ``n_wt`` weights in the narrow one) produces exactly
    ``mults`` products and ``adds`` additions in one multiply with exact field
    extraction.  ``single_weight`` is the largest operand count the
    one-weight layout of :func:`packed_mac_simulate` can extract exactly.
    """

    bits: int
    mults: int
    adds: int
    single_weight: int
    layout: tuple[int, int, int] | None
    admitted: bool


def _layout_fits(hw, bits, n_act, n_wt, stride):
    wide, narrow = hw.dsp_mult_width
    a_lo, a_hi = _packed_range(bits, n_act, stride)
    w_lo, w_hi = _packed_range(bits, n_wt, stride)
    if not (_fits(a_lo, a_hi, wide) and _fits(w_lo, w_hi, narrow)):
        return False
    prods = (a_lo * w_lo, a_lo * w_hi, a_hi * w_lo, a_hi * w_hi)
    return _fits(min(prods), max(prods), hw.accumulator_width)


def check_packing_capacity(hw: "HardwareSpec") -> dict[int, PackingCapacity]:
    """Classify every packing-table row as admitted or throughput-only."""
    out = {}
    for bits, (mults, adds) in sorted(hw.packing_table.items()):
        single = 0
        for n in range(1, 64):
            if _layout_fits(hw, bits, n, 1, single_weight_stride(bits, n)):
                single = n
            else:
                break
        layout = None
        for n_wt in range(1, mults + 1):
            if mults % n_wt:
                continue
            n_act = mults // n_wt
            if n_act < n_wt or mults - (n_act + n_wt - 1) != adds:
                continue
            stride = conv_stride(bits, n_act, n_wt)
            if _layout_fits(hw, bits, n_act, n_wt, stride):
                layout = (n_act, n_wt, stride)
                break
        out[bits] = PackingCapacity(bits, mults, adds, single, layout, layout is not None)
    return out


def _pack(ops, stride):
    """Pack the last axis of ``ops`` (int64) into one signed integer per row."""
    shifts = np.left_shift(np.int64(1), stride * np.arange(ops.shape[-1], dtype=np.int64))
    return (ops * shifts).sum(axis=-1)


def _wrap(x, width):
    half = np.int64(1) << np.int64(width - 1)
    mask = (np.int64(1) << np.int64(width)) - 1
    return ((x + half) & mask) - half


def _extract(acc, count, stride):
    """Split a packed accumulator into ``count`` signed fields, low field first."""
    fields = []
    rest = acc.copy()
    for _ in range(count - 1):
        f = _wrap(rest, stride)
        fields.append(f)
        rest = (rest - f) >> stride
    fields.append(rest)
    return np.stack(fields, axis=-1)


def _check_operands(x, bits, what):
    lo, hi = _operand_range(bits)
    if x.size and (x.min() < lo or x.max() > hi):
        raise InputError(f"{what} outside signed {bits}-bit range [{lo}, {hi}]")


def _dsp(a_packed, w_packed, hw, acc_in=0):
    # one wide multiply, then the post-adder accumulate wrapping at the accumulator width
    return _wrap(a_packed * w_packed + np.int64(acc_in), hw.accumulator_width)


def packed_mac_batch(acts, weights, bits: int, hw: "HardwareSpec"):
    """Vectorized :func:`packed_mac_simulate`: ``acts`` is (cases, n), ``weights`` (cases,)."""
    acts = np.asarray(acts, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.int64)
    n = acts.shape[-1]
    cap = hw.capacity_for(bits)
    if n > cap.mults:
        raise CapacityError(f"{n} operands exceed {cap.mults} multiplications per DSP at {bits} bits")
    if n > cap.single_weight:
        raise CapacityError(
            f"{n} operands exceed the exact single-weight layout capacity "
            f"({cap.single_weight}) at {bits} bits")
    _check_operands(acts, bits, "activation")
    _check_operands(weights, bits, "weight")
    stride = single_weight_stride(bits, n)
    acc = _dsp(_pack(acts, stride), weights, hw)
    return _extract(acc, n, stride)


def packed_mac_simulate(a_vec: Sequence[int], w: int, hw: "HardwareSpec", bits: int) -> list[int]:
    """Multiply ``n`` activations by one weight with a single DSP operation.

    Activations go into the 27-bit port at stride
    :func:`single_weight_stride`, the weight into the 18-bit port; the
    ``n`` products are recovered from the 48-bit accumulator by shift, mask
    and sign correction.
    """
    out = packed_mac_batch(np.asarray(a_vec)[None, :], np.asarray([w]), bits, hw)
    return [int(v) for v in out[0]]


def packed_conv_batch(acts, weights, bits: int, hw: "HardwareSpec"):
    """Vectorized :func:`packed_conv_simulate` over leading case axis."""
    acts = np.asarray(acts, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.int64)
    n_act, n_wt = acts.shape[-1], weights.shape[-1]
    cap = hw.capacity_for(bits)
    if cap.layout is None or cap.layout[:2] != (n_act, n_wt):
        raise CapacityError(
            f"{n_act}x{n_wt} packing is not an admitted layout at {bits} bits (have {cap.layout})")
    _check_operands(acts, bits, "activation")
    _check_operands(weights, bits, "weight")
    stride = cap.layout[2]
    acc = _dsp(_pack(acts, stride), _pack(weights, stride), hw)
    return _extract(acc, n_act + n_wt - 1, stride)


def packed_conv_simulate(a_vec: Sequence[int], w_vec: Sequence[int], hw: "HardwareSpec", bits: int) -> list[int]:
    """Full 1-D convolution of ``a_vec`` with ``w_vec`` from one DSP multiply.

    This is the layout behind the packing-table counts: ``len(a) * len(w)``
    products folded into ``len(a) + len(w) - 1`` output fields, which costs
    ``len(a) * len(w) - (len(a) + len(w) - 1)`` additions.
    """
    out = packed_conv_batch(np.asarray(a_vec)[None, :], np.asarray(w_vec)[None, :], bits, hw)
    return [int(v) for v in out[0]]


# ---------------------------------------------------------------------------
# hardware / constraints


@dataclass
class HardwareSpec:
    rows: int = 32
    cols: int = 32
    dsp_mult_width: tuple[int, int] = (27, 18)
    accumulator_width: int = 48
    packing_table: Mapping[int, tuple[int, int]] = field(default_factory=lambda: dict(DEFAULT_PACKING))
    clock_mhz: float = 200.0
    capacity: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ConfigurationError("systolic array dimensions must be >= 1")
        if self.accumulator_width > 62:
            raise ConfigurationError("accumulator wider than 62 bits is not simulated")
        self.dsp_mult_width = tuple(self.dsp_mult_width)
        self.packing_table = {int(b): tuple(int(v) for v in row) for b, row in self.packing_table.items()}
        for b, (mults, adds) in self.packing_table.items():
            if mults < 1 or adds < 0:
                raise ConfigurationError(f"bad packing entry for {b} bits: {(mults, adds)}")
        self.capacity = check_packing_capacity(self)
        for cap in self.capacity.values():
            if not cap.admitted:
                log.warning("packing %d-bit x%d has no exact layout in %dx%d DSP; "
                            "counted as throughput only", cap.bits, cap.mults, *self.dsp_mult_width)

    def mults_per_dsp(self, bits: int) -> int:
        if bits == BASELINE_BITS:
            return 1
        try:
            return self.packing_table[bits][0]
        except KeyError:
            raise ConfigurationError(f"no packing entry for {bits}-bit operands") from None

    def capacity_for(self, bits: int) -> PackingCapacity:
        try:
            return self.capacity[bits]
        except KeyError:
            raise ConfigurationError(f"no packing entry for {bits}-bit operands") from None

    def flagged_rows(self) -> list[int]:
        return [b for b, cap in self.capacity.items() if not cap.admitted]

    def to_dict(self) -> dict:
        return {
            "rows": self.rows,
            "cols": self.cols,
            "dsp_mult_width": list(self.dsp_mult_width),
            "accumulator_width": self.accumulator_width,
            "packing_table": {str(b): list(v) for b, v in sorted(self.packing_table.items())},
            "clock_mhz": self.clock_mhz,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HardwareSpec":
        allowed = {"rows", "cols", "dsp_mult_width", "accumulator_width", "packing_table", "clock_mhz"}
        unknown = set(d) - allowed
        if unknown:
            raise ConfigurationError(f"unknown hardware keys: {sorted(unknown)}")
        d = dict(d)
        if "packing_table" in d:
            d["packing_table"] = {int(b): tuple(v) for b, v in d["packing_table"].items()}
        return cls(**d)


@dataclass(frozen=True)
class ConstraintSet:
    """Upper bounds on size/latency/energy and a lower bound on throughput."""

    model_size_bytes: float | None = None
    latency_cycles: float | None = None
    energy: float | None = None
    throughput: float | None = None

    def __post_init__(self):
        for name in ("model_size_bytes", "latency_cycles", "energy", "throughput"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ConfigurationError(f"constraint {name} must be positive")

    @property
    def active(self) -> bool:
        return any(v is not None for v in self.to_dict().values())

    def violations(self, report: "CostReport") -> dict[str, float]:
        """Normalized violation per active constraint, ``max(0, excess / bound)``."""
        out = {}
        if self.model_size_bytes is not None:
            out["model_size_bytes"] = max(0.0, report.model_size_bytes / self.model_size_bytes - 1.0)
        if self.latency_cycles is not None:
            out["latency_cycles"] = max(0.0, report.latency_cycles / self.latency_cycles - 1.0)
        if self.energy is not None:
            out["energy"] = max(0.0, report.energy_proxy / self.energy - 1.0)
        if self.throughput is not None:
            out["throughput"] = max(0.0, 1.0 - report.throughput_proxy / self.throughput)
        return out

    def to_dict(self) -> dict:
        return {"model_size_bytes": self.model_size_bytes, "latency_cycles": self.latency_cycles,
                "energy": self.energy, "throughput": self.throughput}

    @classmethod
    def from_dict(cls, d: dict | None) -> "ConstraintSet":
        d = d or {}
        unknown = set(d) - {"model_size_bytes", "latency_cycles", "energy", "throughput"}
        if unknown:
            raise ConfigurationError(f"unknown constraint keys: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# cost models


def layer_size_bytes(layer: LayerShape, bits: int) -> int:
    return -(-layer.weight_count * bits // 8)


def model_size(layers: Sequence[LayerShape], config: Configuration) -> int:
    """Weight storage in bytes after width scaling, rounded up per layer."""
    scaled = scale_layers(layers, config.widths)
    return sum(layer_size_bytes(layer, b) for layer, b in zip(scaled, config.bits))


def layer_latency(layer: LayerShape, bits: int, hw: HardwareSpec) -> int:
    p = hw.mults_per_dsp(bits)
    invocations = -(-layer.out_channels // hw.rows) * layer.out_h * layer.out_w
    inner = -(-layer.patch_size // (hw.cols * p))
    return invocations * (inner + hw.rows + hw.cols - 1)


def latency_cycles(layers: Sequence[LayerShape], config: Configuration, hw: HardwareSpec) -> int:
    scaled = scale_layers(layers, config.widths)
    return sum(layer_latency(layer, b, hw) for layer, b in zip(scaled, config.bits))


def speedup(layers: Sequence[LayerShape], config: Configuration, hw: HardwareSpec,
            baseline_bits: int = BASELINE_BITS) -> float:
    """Latency of the same widths at ``baseline_bits`` over latency of ``config``."""
    base = Configuration((baseline_bits,) * len(config.bits), config.widths)
    return latency_cycles(layers, base, hw) / latency_cycles(layers, config, hw)


@dataclass(frozen=True)
class LayerCost:
    name: str
    bits: int
    width: float
    in_channels: int
    out_channels: int
    weight_count: int
    mac_count: int
    size_bytes: int
    latency_cycles: int


@dataclass(frozen=True)
class CostReport:
    model_size_bytes: int
    latency_cycles: int
    speedup_vs_fp16: float
    energy_proxy: float
    throughput_proxy: float
    baseline_bits: int
    layers: tuple[LayerCost, ...]
    packing_flags: tuple[int, ...] = ()

    @property
    def model_size_mb(self) -> float:
        return self.model_size_bytes / 1e6

    def to_dict(self) -> dict:
        return {
            "model_size_bytes": self.model_size_bytes,
            "model_size_mb": self.model_size_mb,
            "latency_cycles": self.latency_cycles,
            "speedup_vs_fp16": self.speedup_vs_fp16,
            "baseline_bits": self.baseline_bits,
            "energy_proxy": self.energy_proxy,
            "throughput_proxy": self.throughput_proxy,
            "packing_flags": list(self.packing_flags),
            "layers": [vars(c) for c in self.layers],
        }


def cost_report(layers: Sequence[LayerShape], config: Configuration, hw: HardwareSpec,
                baseline_bits: int = BASELINE_BITS) -> CostReport:
    if len(config.bits) != len(layers):
        raise ConfigurationError(f"configuration has {len(config.bits)} entries for {len(layers)} layers")
    scaled = scale_layers(layers, config.widths)
    per_layer = []
    energy = 0.0
    for layer, b, w in zip(scaled, config.bits, config.widths):
        cyc = layer_latency(layer, b, hw)
        per_layer.append(LayerCost(layer.name, b, w, layer.in_channels, layer.out_channels,
                                   layer.weight_count, layer.mac_count,
                                   layer_size_bytes(layer, b), cyc))
        energy += layer.mac_count / hw.mults_per_dsp(b)
    total = sum(c.latency_cycles for c in per_layer)
    base_total = sum(layer_latency(layer, baseline_bits, hw) for layer in scaled)
    used = set(config.bits)
    flags = tuple(b for b in hw.flagged_rows() if b in used)
    return CostReport(
        model_size_bytes=sum(c.size_bytes for c in per_layer),
        latency_cycles=total,
        speedup_vs_fp16=base_total / total,
        energy_proxy=energy,
        throughput_proxy=1.0 / total,
        baseline_bits=baseline_bits,
        layers=tuple(per_layer),
        packing_flags=flags,
    )
