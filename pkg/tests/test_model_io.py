import struct

import numpy as np
import pytest

from qwid import graph as G
from qwid import model_io as io
from qwid.graph import KINDS, GraphBuilder, LayerGraph
from qwid.models import build
from qwid.tensor import QuantTensor

from helpers import calibrated_int8, random_bn, rng_images


def _assert_same_graph(a: LayerGraph, b: LayerGraph):
    assert (a.mode, tuple(a.input_shape), len(a.nodes)) == (b.mode, tuple(b.input_shape), len(b.nodes))
    for x, y in zip(a.nodes, b.nodes):
        assert (x.id, x.kind, list(x.inputs), x.stride, x.padding, x.window) == \
               (y.id, y.kind, list(y.inputs), y.stride, y.padding, y.window)
        if isinstance(x.weight, QuantTensor):
            np.testing.assert_array_equal(x.weight.data, y.weight.data)
            assert x.weight.qscheme == y.weight.qscheme
        elif x.weight is not None:
            assert x.weight.tobytes() == y.weight.tobytes()
        else:
            assert y.weight is None
        for attr in ("bias",):
            u, v = getattr(x, attr), getattr(y, attr)
            assert (u is None) == (v is None)
            if u is not None:
                assert u.dtype == v.dtype and u.tobytes() == v.tobytes()
        assert x.qparams == y.qparams
        if x.bn is not None:
            for f in ("gamma", "beta", "mean", "var"):
                np.testing.assert_array_equal(getattr(x.bn, f), getattr(y.bn, f))
            assert (x.bn.eps, x.bn.momentum) == (y.bn.eps, y.bn.momentum)
        if x.requant is not None:
            np.testing.assert_array_equal(x.requant.multiplier, y.requant.multiplier)
        if x.observer is not None:
            assert (x.observer.count, x.observer.lo, x.observer.hi) == (y.observer.count, y.observer.lo, y.observer.hi)


@pytest.fixture(scope="module", params=["tinyresnet", "tinyinception"])
def models(request):
    fp = random_bn(build(request.param, seed=3), seed=3)
    fq = G.prepare_qat(fp)
    G.forward(fq, rng_images(8, seed=1), calibrate=True)
    return fp, fq, G.convert(fq)


class TestRoundTrip:
    @pytest.mark.parametrize("which", [0, 1, 2])
    def test_graph_equal(self, tmp_path, models, which):
        g = models[which]
        path = tmp_path / "m.qwid"
        n = io.save(g, path)
        assert n == io.model_size_bytes(path)
        _assert_same_graph(g, io.load(path))

    @pytest.mark.parametrize("which", [0, 1, 2])
    def test_save_load_save_identical(self, tmp_path, models, which):
        a = io.to_bytes(models[which])
        assert io.to_bytes(io.from_bytes(a)) == a

    @pytest.mark.parametrize("which", [0, 1, 2])
    def test_forward_bit_identical(self, models, which):
        g = models[which]
        x = rng_images(3, seed=9)
        back = io.from_bytes(io.to_bytes(g))
        np.testing.assert_array_equal(G.forward(back, x), G.forward(g, x))
        if g.mode == G.INT8:
            np.testing.assert_array_equal(G.forward(back, x, reference=True), G.forward(g, x, reference=True))

    def test_mode_byte(self, models):
        assert [io.to_bytes(g)[6] for g in models] == [0, 2, 1]

    def test_empty_graph(self, tmp_path):
        g = LayerGraph([], G.FP32, (3, 32, 32))
        io.save(g, tmp_path / "e.qwid")
        back = io.load(tmp_path / "e.qwid")
        _assert_same_graph(g, back)
        assert io.model_size_bytes(tmp_path / "e.qwid") == 4 + 2 + 1 + 4 + 1 + 12


class TestByteLayout:
    def test_hand_built_file(self):
        # independent encoding of input -> relu -> maxpool(3, 2) with the documented layout
        b = GraphBuilder((2, 5, 7))
        b.maxpool(b.relu(b.input()), 3, 2)
        expected = b"QWID" + struct.pack("<HBI", 1, 0, 3) + struct.pack("<B3I", 3, 2, 5, 7)
        expected += struct.pack("<BB", 0, 0) + struct.pack("<HHHB", 1, 0, 2, 0)
        expected += struct.pack("<BBI", 3, 1, 0) + struct.pack("<HHHB", 1, 0, 2, 0)
        expected += struct.pack("<BBI", 5, 1, 1) + struct.pack("<HHHB", 2, 0, 3, 0)
        assert io.to_bytes(b.build()) == expected

    def test_weight_blob(self):
        b = GraphBuilder((1, 1, 1))
        w = np.array([[1.5], [-2.0]], np.float32)
        b.linear(b.input(), w, np.array([0.25, 4.0], np.float32))
        blob = io.to_bytes(b.build())
        node = struct.pack("<BBI", 2, 1, 0) + struct.pack("<HHHB", 1, 0, 2, io.F_WEIGHT | io.F_BIAS)
        node += struct.pack("<B2I", 2, 2, 1) + struct.pack("<2f", 1.5, -2.0) + struct.pack("<I2f", 2, 0.25, 4.0)
        assert blob.endswith(node)

    def test_kind_codes_stable(self):
        assert KINDS.index("input") == 0 and KINDS.index("fake-quant") == 13
        assert len(KINDS) == 14


class TestErrors:
    def test_bad_magic(self, models):
        data = bytearray(io.to_bytes(models[0]))
        data[:4] = b"QWIX"
        with pytest.raises(io.BadMagicError):
            io.from_bytes(bytes(data))

    def test_version(self, models):
        data = bytearray(io.to_bytes(models[0]))
        data[4:6] = struct.pack("<H", 999)
        with pytest.raises(io.UnsupportedVersionError):
            io.from_bytes(bytes(data))

    @pytest.mark.parametrize("cut", [5, 11, 100, -1])
    def test_truncated(self, models, cut):
        data = io.to_bytes(models[2])
        with pytest.raises(io.TruncatedModelError):
            io.from_bytes(data[:cut])

    def test_distinct_errors(self):
        kinds = {io.BadMagicError, io.UnsupportedVersionError, io.TruncatedModelError}
        assert len(kinds) == 3
        assert all(issubclass(k, io.ModelFormatError) for k in kinds)
        assert not any(issubclass(a, b) for a in kinds for b in kinds if a is not b)

    def test_trailing_bytes(self, models):
        with pytest.raises(io.ModelFormatError):
            io.from_bytes(io.to_bytes(models[0]) + b"\0")

    def test_unknown_mode_and_kind(self, models):
        data = bytearray(io.to_bytes(models[0]))
        data[6] = 7
        with pytest.raises(io.ModelFormatError):
            io.from_bytes(bytes(data))
        data = bytearray(io.to_bytes(models[0]))
        data[12 + 1 + 12] = 200  # first node's kind byte
        with pytest.raises(io.ModelFormatError):
            io.from_bytes(bytes(data))

    def test_zero_length_file(self, tmp_path):
        p = tmp_path / "z.qwid"
        p.write_bytes(b"")
        assert io.model_size_bytes(p) == 0
        with pytest.raises(io.ModelFormatError):
            io.load(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(OSError):
            io.load(tmp_path / "nope.qwid")


class TestSize:
    @pytest.mark.parametrize("arch", ["tinyresnet", "tinyinception"])
    def test_fp32_is_four_bytes_per_parameter(self, arch):
        g = build(arch)
        p = G.num_parameters(g)
        size = len(io.to_bytes(g))
        assert 4 * p <= size <= 1.05 * 4 * p

    def test_int8_ratio(self, models):
        fp, _, g8 = models
        ratio = len(io.to_bytes(g8)) / len(io.to_bytes(G.fuse(G.fold_bn(fp))))
        assert ratio <= 0.30
        # against the unfolded file the batch-norm arrays only make fp32 larger
        assert len(io.to_bytes(g8)) / len(io.to_bytes(fp)) <= ratio

    @pytest.mark.parametrize("shape", [(72, 16, 3, 3), (96, 128, 1, 1), (10, 1000, 1, 1)])
    def test_int8_ratio_for_wide_fan_in(self, shape):
        # every output channel carries ~24 bytes of int8 metadata, so the ratio
        # holds once each channel has a fan-in of roughly 114 or more
        w = np.random.default_rng(0).normal(size=shape)
        b = GraphBuilder((shape[1], 4, 4))
        b.conv(b.input(), w, padding=shape[2] // 2)
        g = b.build()
        assert G.num_parameters(g) >= 10_000
        g8 = calibrated_int8(g, x=rng_images(4, (shape[1], 4, 4)))
        assert len(io.to_bytes(g8)) / len(io.to_bytes(g)) <= 0.30

    def test_narrow_fan_in_exceeds_ratio(self):
        # 10,000 parameters spread over 5,000 single-input channels: the
        # per-channel scale, zero point and multiplier dominate the file
        b = GraphBuilder((1, 1, 1))
        b.linear(b.input(), np.linspace(-1, 1, 5000).reshape(5000, 1))
        g = b.build()
        assert G.num_parameters(g) == 10_000
        g8 = calibrated_int8(g, x=rng_images(4, (1, 1, 1)))
        assert len(io.to_bytes(g8)) / len(io.to_bytes(g)) > 0.30
