"""
Operand packing and the systolic-array cost model
==================================================

A 27x18 multiplier with a 48-bit accumulator can hold several low-bit
operands at once.  We check each packing-table row, run one packed
convolution by hand, then price ResNet-20 at a few precisions.
"""

import numpy as np

from kmtpe import Configuration, HardwareSpec, cost_report, preset
from kmtpe.hw import check_packing_capacity, packed_conv_simulate

hw = HardwareSpec()
for bits, cap in check_packing_capacity(hw).items():
    print(f"{bits}-bit: {cap.mults} mults/DSP, layout {cap.layout}, admitted {cap.admitted}")

###############################################################################
# Three 4-bit activations convolved with two 4-bit weights in one multiply.

a, w = [7, -8, 3], [-5, 6]
print("packed:", packed_conv_simulate(a, w, hw, 4), "direct:", np.convolve(a, w).tolist())

###############################################################################
# Size and latency of ResNet-20 under uniform precisions.

layers = preset("resnet20")
for bits in (16, 8, 4, 2):
    rep = cost_report(layers, Configuration.uniform(len(layers), bits), hw)
    print(f"{bits:2d}-bit  {rep.model_size_mb:.4f} MB  {rep.latency_cycles:8d} cycles"
          f"  speedup {rep.speedup_vs_fp16:.2f}x")
