import copy

import numpy as np
import pytest

from qwid import graph as G
from qwid.engine import _weight_plan, compile_int8
from qwid.errors import GraphError
from qwid.graph import GraphBuilder
from qwid.models import build
from qwid.quant import QuantParams

from helpers import calibrated_int8, random_bn, rng_images


def _same(g8, x):
    fast = G.forward(g8, x)
    ref = G.forward(g8, x, reference=True)
    np.testing.assert_array_equal(fast, ref)
    return fast


@pytest.mark.parametrize("arch", ["tinyresnet", "tinyinception"])
@pytest.mark.parametrize("batch", [1, 3])
def test_bit_identical_to_reference(arch, batch):
    g8 = calibrated_int8(random_bn(build(arch, seed=batch), seed=batch))
    # inputs reaching outside the calibrated range exercise saturation
    _same(g8, rng_images(batch, seed=11, lo=-0.5, hi=1.5))


def test_flatten_of_spatial_map_and_4d_output():
    rng = np.random.default_rng(0)
    b = GraphBuilder((2, 4, 4))
    c = b.relu(b.conv(b.input(), rng.normal(size=(3, 2, 3, 3)), padding=1))
    b.linear(c, rng.normal(size=(5, 48)))
    _same(calibrated_int8(b.build(), x=rng_images(8, (2, 4, 4))), rng_images(4, (2, 4, 4), seed=3))

    b = GraphBuilder((2, 6, 6))
    b.maxpool(b.conv(b.input(), rng.normal(size=(4, 2, 3, 3)), stride=2), 2)
    out = _same(calibrated_int8(b.build(), x=rng_images(8, (2, 6, 6))), rng_images(2, (2, 6, 6), seed=4))
    assert out.shape == (2, 4)


def test_relu_with_own_params():
    rng = np.random.default_rng(1)
    b = GraphBuilder((2, 5, 5))
    x = b.input()
    b.relu(b.add(b.conv(x, rng.normal(size=(2, 2, 1, 1))), x))
    g8 = calibrated_int8(b.build(), x=rng_images(8, (2, 5, 5), lo=-1))
    relu = next(n for n in g8.nodes if n.kind == "relu")
    relu.qparams = QuantParams(relu.qparams.scale * 0.7, -100)
    _same(g8, rng_images(3, (2, 5, 5), seed=5, lo=-1))


def test_wide_accumulator_uses_exact_float64():
    # 64 channels x 3x3 with saturated weights forces the float64 product path
    b = GraphBuilder((64, 3, 3))
    b.conv(b.input(), np.ones((2, 64, 3, 3)), padding=1)
    g8 = calibrated_int8(b.build(), x=rng_images(4, (64, 3, 3), lo=-1))
    conv = next(n for n in g8.nodes if n.kind == "conv")
    _, dtype, bound = _weight_plan(conv.weight, 255)
    assert dtype == np.float64 and bound >= 2**24
    _same(g8, rng_images(2, (64, 3, 3), seed=6, lo=-1))


def test_program_cache_tracks_edits():
    g8 = calibrated_int8(build("tinyresnet", seed=0))
    first = G.int8_program(g8)
    assert G.int8_program(g8) is first
    g8.nodes[1].requant = copy.deepcopy(g8.nodes[1].requant)
    assert G.int8_program(g8) is not first


def test_rejects_non_int8():
    with pytest.raises(GraphError):
        compile_int8(build("tinyresnet"))


def test_input_shape_checked():
    g8 = calibrated_int8(build("tinyresnet"))
    with pytest.raises(GraphError):
        compile_int8(g8).run(np.zeros((1, 3, 8, 8), np.float32))
