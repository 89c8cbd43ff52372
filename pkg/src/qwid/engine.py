"""Compiled int8 inference.

``compile_int8`` turns a converted graph into a flat list of steps with every
per-node constant (weight matrices, float64 bias, multipliers, clamp bounds)
precomputed, and keeps activations as bare int8 arrays in NHWC layout so
that convolution outputs need no transpose. Each step evaluates the same
arithmetic as the reference kernels in :mod:`qwid.kernels`, so outputs are
bit-identical to ``graph.forward_reference``.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import GraphError, ShapeError
from .kernels import ACC_MAX, _to_acc32
from .quant import QuantParams, _affine_quantize

_F32_EXACT = 2**24


def _weight_plan(w, x_span: int):
    """Weight matrix ``(fh*fw*cin, cout)`` in NHWC patch order plus the
    float type that keeps every partial sum exact.

    ``|partial sum| <= x_span * max_c sum_k |w[c, k]|``, so float32 is used
    whenever that bound stays below 2**24.
    """
    wq = w.data.astype(np.int64)
    if wq.ndim == 4:
        wq = wq.transpose(2, 3, 1, 0).reshape(-1, wq.shape[0])
    else:
        wq = wq.T
    l1 = int(np.abs(wq).sum(axis=0).max()) if wq.size else 0
    bound = x_span * l1
    if bound >= 2**53:
        raise OverflowError("accumulator bound exceeds exact float range")
    dtype = np.float32 if bound < _F32_EXACT else np.float64
    return np.ascontiguousarray(wq.astype(dtype)), dtype, bound


class _Requant:
    """rint(M * acc) + z_y, clamped; ``relu`` raises the floor to z_y."""

    def __init__(self, node, relu: bool, bound: int):
        out = node.requant.output
        m = node.requant.multiplier
        self.m = m if m.size > 1 else m[0]
        self.z = out.zero_point
        self.lo = out.zero_point if relu else out.qmin
        self.hi = out.qmax
        cout = node.weight.shape[0]
        bias = np.zeros(cout, np.int32) if node.bias is None else np.asarray(node.bias)
        self.bias = bias.astype(np.float64)
        self.wrap = bound + (int(np.abs(bias.astype(np.int64)).max()) if bias.size else 0) > ACC_MAX

    def __call__(self, acc):
        a = np.add(acc, self.bias, dtype=np.float64)
        if self.wrap:
            _to_acc32(a)
        a *= self.m
        np.rint(a, out=a)
        a += self.z
        np.maximum(a, self.lo, out=a)
        np.minimum(a, self.hi, out=a)
        return a.astype(np.int8)


def _span(p: QuantParams) -> int:
    return max(p.zero_point - p.qmin, p.qmax - p.zero_point)


class Int8Program:
    """Executable form of an int8 ``LayerGraph``."""

    def __init__(self, steps, n_slots: int, input_shape, out_params: QuantParams, out_nhwc: bool):
        self.steps = steps
        self.n_slots = n_slots
        self.input_shape = tuple(input_shape)
        self.out_params = out_params
        self.out_nhwc = out_nhwc

    def run_quantized(self, x: np.ndarray) -> np.ndarray:
        """Integer output of the last node before the dequantize stub (NCHW)."""
        x = np.asarray(x)
        if x.ndim != 4 or tuple(x.shape[1:]) != self.input_shape:
            raise GraphError(f"input shape {x.shape} does not match graph input {self.input_shape}")
        slots = [None] * self.n_slots
        slots[0] = x
        for fn, ins, out, free in self.steps:
            slots[out] = fn(*[slots[i] for i in ins])
            for i in free:
                slots[i] = None
        y = slots[self.steps[-1][2]]
        return y.transpose(0, 3, 1, 2) if self.out_nhwc else y

    def run(self, x: np.ndarray) -> np.ndarray:
        """Float logits ``(N, -1)``."""
        y = self.run_quantized(x)
        p = self.out_params
        real = (y.astype(np.float64) - p.zero_point) * p.scale
        return real.astype(np.float32).reshape(y.shape[0], -1)


def _conv_step(node, in_params: QuantParams):
    relu = node.kind == "fused-conv-relu"
    cout, cin, fh, fw = node.weight.shape
    wmat, dtype, bound = _weight_plan(node.weight, _span(in_params))
    rq = _Requant(node, relu, bound)
    z_x = in_params.zero_point
    st, p = node.stride, node.padding

    def conv(x):
        n, h, w, c = x.shape
        if c != cin:
            raise ShapeError(f"input has {c} channels, weight expects {cin}")
        ho = (h + 2 * p - fh) // st + 1
        wo = (w + 2 * p - fw) // st + 1
        if p:
            xs = np.zeros((n, h + 2 * p, w + 2 * p, c), dtype)
            np.subtract(x, z_x, out=xs[:, p : p + h, p : p + w], dtype=dtype)
        else:
            xs = np.subtract(x, z_x, dtype=dtype)
        if fh == 1 and fw == 1 and st == 1:
            cols = xs.reshape(-1, c)
        else:
            s0, s1, s2, s3 = xs.strides
            win = as_strided(xs, (n, ho, wo, fh, fw, c), (s0, s1 * st, s2 * st, s1, s2, s3), writeable=False)
            cols = win.reshape(n * ho * wo, fh * fw * c)
        return rq(cols @ wmat).reshape(n, ho, wo, cout)

    return conv


def _linear_step(node, in_params: QuantParams):
    wmat, dtype, bound = _weight_plan(node.weight, _span(in_params))
    rq = _Requant(node, False, bound)
    z_x, k = in_params.zero_point, node.weight.shape[1]

    def linear(x):
        # NHWC (N,1,1,C) and NCHW flattening agree only for 1x1 spatial maps
        if x.ndim == 4 and x.shape[1] * x.shape[2] != 1:
            x = x.transpose(0, 3, 1, 2)
        xs = np.subtract(x.reshape(x.shape[0], -1), z_x, dtype=dtype)
        if xs.shape[1] != k:
            raise ShapeError(f"linear expects {k} features, got {xs.shape[1]}")
        return rq(xs @ wmat)

    return linear


def _relu_step(p: QuantParams, out: QuantParams):
    if out == p:
        z = np.int8(p.zero_point)
        return lambda x: np.maximum(x, z)
    r = p.scale / out.scale

    def relu(x):
        xq = x.astype(np.int32)
        pos = np.clip(np.rint(out.zero_point + r * (xq - p.zero_point)), out.qmin, out.qmax)
        return np.where(xq < p.zero_point, out.zero_point, pos).astype(np.int8)

    return relu


def _rescale_table(p: QuantParams, out: QuantParams) -> np.ndarray:
    # table[u] = (int8(u) - z) * s / s_y for the uint8 view u of each code
    codes = np.arange(256, dtype=np.uint8).view(np.int8).astype(np.float64)
    codes -= p.zero_point
    codes *= p.scale / out.scale
    return codes


def _add_step(pa: QuantParams, pb: QuantParams, out: QuantParams):
    ta, tb = _rescale_table(pa, out), _rescale_table(pb, out)

    def add(a, b):
        if a.shape != b.shape:
            raise ShapeError(f"add operands differ: {a.shape} vs {b.shape}")
        y = ta.take(a.view(np.uint8))
        y += out.zero_point
        y += tb.take(b.view(np.uint8))
        np.rint(y, out=y)
        np.maximum(y, out.qmin, out=y)
        np.minimum(y, out.qmax, out=y)
        return y.astype(np.int8)

    return add


def _concat_step(ps, out: QuantParams):
    tables = [_rescale_table(p, out) for p in ps]

    def concat(*xs):
        parts = []
        for t, x in zip(tables, xs):
            y = t.take(x.view(np.uint8))
            y += out.zero_point
            np.rint(y, out=y)
            parts.append(np.clip(y, out.qmin, out.qmax))
        return np.concatenate(parts, axis=-1).astype(np.int8)

    return concat


def _maxpool_step(window: int, stride: int):
    def maxpool(x):
        n, h, w, c = x.shape
        if window > h or window > w:
            raise ShapeError(f"window {window} larger than input {(h, w)}")
        ho, wo = (h - window) // stride + 1, (w - window) // stride + 1
        out = None
        for i in range(window):
            for j in range(window):
                tap = x[:, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride]
                out = tap.copy() if out is None else np.maximum(out, tap, out=out)
        return out

    return maxpool


def _gavgpool_step(p: QuantParams, out: QuantParams):
    def gavgpool(x):
        h, w = x.shape[1], x.shape[2]
        acc = (x.astype(np.int32) - p.zero_point).sum(axis=(1, 2), keepdims=True, dtype=np.int32)
        m = p.scale / (h * w * out.scale)
        return np.clip(np.rint(m * acc) + out.zero_point, out.qmin, out.qmax).astype(np.int8)

    return gavgpool


def _quantize_step(p: QuantParams):
    def quantize(x):
        q = _affine_quantize(x.transpose(0, 2, 3, 1), p.scale, p.zero_point, p.qmin, p.qmax)
        return q.astype(np.int8)

    return quantize


def compile_int8(g) -> Int8Program:
    """Precompute an :class:`Int8Program` for a converted (int8) graph."""
    from .graph import INT8

    if g.mode != INT8:
        raise GraphError(f"compile_int8 needs an int8 graph, got mode {g.mode!r}")
    g.validate()
    nodes = g.nodes
    if not nodes or nodes[0].kind != "quantize-stub" or nodes[0].inputs:
        raise GraphError("int8 graph must start with an input quantize stub")
    last_use = {}
    for n in nodes:
        for i in n.inputs:
            last_use[i] = n.id
    params: dict[int, QuantParams] = {0: nodes[0].qparams}
    ndim: dict[int, int] = {0: 4}
    steps = [(_quantize_step(nodes[0].qparams), (0,), 0, ())]
    end = nodes[-1]
    body = nodes[1:-1] if end.kind == "dequantize-stub" else nodes[1:]
    for n in body:
        k, ins = n.kind, tuple(n.inputs)
        p_in = [params[i] for i in ins]
        if k in ("conv", "fused-conv-relu"):
            fn, out = _conv_step(n, p_in[0]), n.requant.output
        elif k == "linear":
            fn, out = _linear_step(n, p_in[0]), n.requant.output
        elif k == "relu":
            out = p_in[0] if n.qparams is None else n.qparams
            fn = _relu_step(p_in[0], out)
        elif k == "add":
            fn, out = _add_step(p_in[0], p_in[1], n.qparams), n.qparams
        elif k == "concat":
            fn, out = _concat_step(p_in, n.qparams), n.qparams
        elif k == "maxpool":
            fn, out = _maxpool_step(n.window, n.stride), p_in[0]
        elif k == "gavgpool":
            out = p_in[0] if n.qparams is None else n.qparams
            fn = _gavgpool_step(p_in[0], out)
        else:
            raise GraphError(f"node kind {k!r} cannot run in int8 mode")
        params[n.id] = out
        ndim[n.id] = 2 if k == "linear" else 4
        free = tuple(i for i in set(ins) if last_use.get(i) == n.id)
        steps.append((fn, ins, n.id, free))
    tail = body[-1].id if body else 0
    if end.kind == "dequantize-stub" and end.inputs != [tail]:
        raise GraphError("dequantize stub must consume the preceding node")
    return Int8Program(steps, len(nodes), g.input_shape, params[tail], ndim[tail] == 4)
