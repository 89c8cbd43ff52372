"""Toy architectures covering the residual and inception layer vocabularies."""
from __future__ import annotations

import numpy as np

from .data import NUM_CLASSES
from .graph import BatchNorm, GraphBuilder, LayerGraph
from .rng import SplitMix64


class _Init:
    def __init__(self, seed: int):
        self.rng = SplitMix64(seed).spawn(0x1417)

    def he(self, shape) -> np.ndarray:
        fan_in = int(np.prod(shape[1:]))
        return (self.rng.normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)


def _conv_bn(b: GraphBuilder, init: _Init, src, cin, cout, k, relu=True, stride=1):
    x = b.conv(src, init.he((cout, cin, k, k)), stride=stride, padding=k // 2)
    x = b.batchnorm(x, BatchNorm.identity(cout))
    return b.relu(x) if relu else x


def _residual(b, init, src, cin, cout):
    y = _conv_bn(b, init, src, cin, cout, 3)
    y = _conv_bn(b, init, y, cout, cout, 3, relu=False)
    skip = src if cin == cout else _conv_bn(b, init, src, cin, cout, 1, relu=False)
    return b.relu(b.add(y, skip))


def tiny_resnet(seed: int = 0, widths=(16, 48), num_classes: int = NUM_CLASSES, size: int = 32) -> LayerGraph:
    """Stem conv-bn-relu, one residual block per width with 2x2 max-pool
    between stages, global average pool, linear head."""
    init = _Init(seed)
    b = GraphBuilder((3, size, size))
    x = _conv_bn(b, init, b.input(), 3, widths[0], 3)
    cin = widths[0]
    for w in widths:
        x = b.maxpool(x, 2)
        x = _residual(b, init, x, cin, w)
        cin = w
    x = b.gavgpool(x)
    b.linear(x, init.he((num_classes, cin)))
    return b.build()


def _inception(b, init, src, cin, c1, c3_reduce, c3):
    left = _conv_bn(b, init, src, cin, c1, 1)
    right = _conv_bn(b, init, src, cin, c3_reduce, 1)
    right = _conv_bn(b, init, right, c3_reduce, c3, 3)
    return b.concat(left, right)


def tiny_inception(seed: int = 0, num_classes: int = NUM_CLASSES, size: int = 32) -> LayerGraph:
    """Stem plus two inception blocks of parallel 1x1 / 1x1->3x3 branches."""
    init = _Init(seed)
    b = GraphBuilder((3, size, size))
    x = _conv_bn(b, init, b.input(), 3, 16, 3)
    x = b.maxpool(x, 2)
    x = _inception(b, init, x, 16, 16, 16, 32)
    x = b.maxpool(x, 2)
    x = _inception(b, init, x, 48, 32, 32, 64)
    x = b.maxpool(x, 2)
    x = b.gavgpool(x)
    b.linear(x, init.he((num_classes, 96)))
    return b.build()


ARCHITECTURES = {"tinyresnet": tiny_resnet, "tinyinception": tiny_inception}


def build(arch: str, seed: int = 0, size: int = 32) -> LayerGraph:
    try:
        return ARCHITECTURES[arch](seed=seed, size=size)
    except KeyError:
        raise ValueError(f"unknown architecture {arch!r}; choose from {sorted(ARCHITECTURES)}") from None
