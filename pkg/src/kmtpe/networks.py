"""Layer-shape lists for reference architectures.

Only weight layers (convolutions and the classifier) are listed; batch-norm
parameters and biases are not part of the weight budget.  ImageNet models use
224x224 inputs, ResNet-20 uses 32x32 CIFAR inputs with parameter-free
(option A) shortcuts.  Residual sums are attributed to the main branch, so a
block that follows a projection shortcut reads its ``source`` from the main
branch's last convolution.
"""

from __future__ import annotations

from .space import LayerShape


class _Builder:
    def __init__(self):
        self.layers: list[LayerShape] = []
        self.head: int = -1  # index producing the current feature map

    def conv(self, name, cin, cout, k, hw, groups=1, source=None, advance=True):
        src = self.head if source is None else source
        prev = len(self.layers) - 1
        self.layers.append(LayerShape(name, "conv2d", cin, cout, k, k, hw, hw, groups,
                                      None if src == prev else src))
        if advance:
            self.head = len(self.layers) - 1
        return len(self.layers) - 1

    def dense(self, name, cin, cout):
        prev = len(self.layers) - 1
        self.layers.append(LayerShape(name, "dense", cin, cout,
                                      source=None if self.head == prev else self.head))
        self.head = len(self.layers) - 1


def resnet18(num_classes: int = 1000) -> list[LayerShape]:
    b = _Builder()
    b.conv("conv1", 3, 64, 7, 112)
    cin, hw = 64, 56
    for stage, cout in enumerate((64, 128, 256, 512), start=1):
        for block in range(2):
            down = stage > 1 and block == 0
            out_hw = hw // 2 if down else hw
            block_in = b.head
            b.conv(f"layer{stage}.{block}.conv1", cin, cout, 3, out_hw)
            main = b.conv(f"layer{stage}.{block}.conv2", cout, cout, 3, out_hw)
            if down:
                b.conv(f"layer{stage}.{block}.downsample", cin, cout, 1, out_hw,
                       source=block_in, advance=False)
            b.head = main
            cin, hw = cout, out_hw
    b.dense("fc", 512, num_classes)
    return b.layers


def resnet50(num_classes: int = 1000) -> list[LayerShape]:
    b = _Builder()
    b.conv("conv1", 3, 64, 7, 112)
    cin, hw = 64, 56
    stages = ((64, 3), (128, 4), (256, 6), (512, 3))
    for stage, (width, blocks) in enumerate(stages, start=1):
        cout = width * 4
        for block in range(blocks):
            down = stage > 1 and block == 0
            out_hw = hw // 2 if down else hw
            block_in = b.head
            b.conv(f"layer{stage}.{block}.conv1", cin, width, 1, hw)
            b.conv(f"layer{stage}.{block}.conv2", width, width, 3, out_hw)
            main = b.conv(f"layer{stage}.{block}.conv3", width, cout, 1, out_hw)
            if block == 0:
                b.conv(f"layer{stage}.{block}.downsample", cin, cout, 1, out_hw,
                       source=block_in, advance=False)
            b.head = main
            cin, hw = cout, out_hw
    b.dense("fc", 2048, num_classes)
    return b.layers


def resnet20(num_classes: int = 10) -> list[LayerShape]:
    """CIFAR ResNet-20: 19 convolutions plus the classifier (20 entries)."""
    b = _Builder()
    b.conv("conv1", 3, 16, 3, 32)
    cin, hw = 16, 32
    for stage, cout in enumerate((16, 32, 64), start=1):
        for block in range(3):
            if stage > 1 and block == 0:
                hw //= 2
            b.conv(f"layer{stage}.{block}.conv1", cin, cout, 3, hw)
            b.conv(f"layer{stage}.{block}.conv2", cout, cout, 3, hw)
            cin = cout
    b.dense("fc", 64, num_classes)
    return b.layers


def _make_divisible(v, divisor=8):
    new_v = max(divisor, int(v + divisor / 2) // divisor * divisor)
    if new_v < 0.9 * v:
        new_v += divisor
    return new_v


def mobilenet_v2(num_classes: int = 1000) -> list[LayerShape]:
    b = _Builder()
    b.conv("features.0", 3, 32, 3, 112)
    cin, hw = 32, 112
    settings = ((1, 16, 1, 1), (6, 24, 2, 2), (6, 32, 3, 2), (6, 64, 4, 2),
                (6, 96, 3, 1), (6, 160, 3, 2), (6, 320, 1, 1))
    idx = 1
    for t, c, n, s in settings:
        cout = _make_divisible(c)
        for i in range(n):
            stride = s if i == 0 else 1
            hidden = cin * t
            out_hw = hw // stride
            if t != 1:
                b.conv(f"features.{idx}.expand", cin, hidden, 1, hw)
            b.conv(f"features.{idx}.dw", hidden, hidden, 3, out_hw, groups=hidden)
            b.conv(f"features.{idx}.project", hidden, cout, 1, out_hw)
            cin, hw = cout, out_hw
            idx += 1
    b.conv(f"features.{idx}", cin, 1280, 1, hw)
    b.dense("classifier", 1280, num_classes)
    return b.layers


def mobilenet_v1(num_classes: int = 1000, resolution: int = 224) -> list[LayerShape]:
    """MobileNetV1: one stem conv, 13 depthwise/pointwise pairs, classifier (28 entries)."""
    b = _Builder()
    hw = resolution // 2
    b.conv("conv0", 3, 32, 3, hw)
    plan = ((32, 64, 1), (64, 128, 2), (128, 128, 1), (128, 256, 2), (256, 256, 1),
            (256, 512, 2), (512, 512, 1), (512, 512, 1), (512, 512, 1), (512, 512, 1),
            (512, 512, 1), (512, 1024, 2), (1024, 1024, 1))
    for i, (cin, cout, stride) in enumerate(plan, start=1):
        hw = max(1, hw // stride)
        b.conv(f"block{i}.dw", cin, cin, 3, hw, groups=cin)
        b.conv(f"block{i}.pw", cin, cout, 1, hw)
    b.dense("fc", 1024, num_classes)
    return b.layers


PRESETS = {
    "resnet18": resnet18,
    "resnet20": resnet20,
    "resnet50": resnet50,
    "mobilenet_v2": mobilenet_v2,
    "mobilenet_v1": mobilenet_v1,
}


def preset(name: str, **kwargs) -> list[LayerShape]:
    from .errors import ConfigurationError

    try:
        return PRESETS[name](**kwargs)
    except KeyError:
        raise ConfigurationError(f"unknown network preset {name!r}; choose from {sorted(PRESETS)}") from None
