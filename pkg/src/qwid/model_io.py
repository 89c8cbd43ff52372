"""The QWID binary model format (little-endian throughout).

Header::

    4s   magic "QWID"
    u16  format version (1)
    u8   mode: 0 fp32, 1 int8, 2 fake-quant checkpoint
    u32  node count
    u8   input rank r, then r x u32 input dims (C, H, W)

Each node, in topological order (its id is its position)::

    u8   kind code (index into graph.KINDS)
    u8   input count n, then n x u32 input ids
    u16  stride, u16 padding, u16 pool window
    u8   flags: 1 weight | 2 bias | 4 batchnorm | 8 output qparams
                | 16 requant multipliers | 32 observer
    weight   u8 rank, rank x u32 dims, then
               float modes: f32 elements
               int8: u8 scheme (0 per-tensor, 1 per-channel), u8 axis,
                     u32 k, k x (f64 scale, i32 zero point), i8 elements
    bias     u32 length, f32 (float modes) or i32 (int8) elements
    bn       u32 channels, f32 gamma, beta, running mean, running var,
             f64 eps, f64 momentum
    qparams  f64 scale, i32 zero point
    requant  u32 k, k x f64 multipliers (output params are the node qparams)
    observer u64 count, f64 lo, f64 hi

Quantized grids are always int8 ([-128, 127]).
"""
from __future__ import annotations

import os
import struct

import numpy as np

from .errors import QwidError
from .graph import FAKE_QUANT, FP32, INT8, KINDS, BatchNorm, LayerGraph, Node
from .kernels import RequantSpec
from .observer import MinMaxObserver
from .quant import QuantParams
from .tensor import PerChannel, PerTensor, QuantTensor

MAGIC = b"QWID"
VERSION = 1
_MODE_CODES = {FP32: 0, INT8: 1, FAKE_QUANT: 2}
_MODES = {v: k for k, v in _MODE_CODES.items()}

F_WEIGHT, F_BIAS, F_BN, F_QPARAMS, F_REQUANT, F_OBSERVER = 1, 2, 4, 8, 16, 32


class ModelFormatError(QwidError, ValueError):
    pass


class BadMagicError(ModelFormatError):
    pass


class UnsupportedVersionError(ModelFormatError):
    pass


class TruncatedModelError(ModelFormatError):
    pass


class _Writer:
    def __init__(self):
        self.buf = bytearray()

    def pack(self, fmt, *vals):
        self.buf += struct.pack("<" + fmt, *vals)

    def array(self, a, dtype):
        self.buf += np.ascontiguousarray(a, dtype=np.dtype(dtype).newbyteorder("<")).tobytes()


class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n: int) -> memoryview:
        if self.pos + n > len(self.data):
            raise TruncatedModelError(f"model file truncated at byte {self.pos} (needed {n} more)")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        fmt = "<" + fmt
        vals = struct.unpack(fmt, self.take(struct.calcsize(fmt)))
        return vals if len(vals) > 1 else vals[0]

    def array(self, dtype, count):
        dt = np.dtype(dtype).newbyteorder("<")
        return np.frombuffer(self.take(dt.itemsize * count), dt).astype(np.dtype(dtype).newbyteorder("="))


def _write_params(w: _Writer, p: QuantParams):
    w.pack("di", p.scale, p.zero_point)


def _read_params(r: _Reader) -> QuantParams:
    scale, zp = r.unpack("di")
    return QuantParams(scale, zp)


def to_bytes(g: LayerGraph) -> bytes:
    g.validate()
    w = _Writer()
    w.pack("4sHBI", MAGIC, VERSION, _MODE_CODES[g.mode], len(g.nodes))
    w.pack("B", len(g.input_shape))
    w.pack(f"{len(g.input_shape)}I", *g.input_shape)
    quantized = g.mode == INT8
    for n in g.nodes:
        w.pack("BB", KINDS.index(n.kind), len(n.inputs))
        if n.inputs:
            w.pack(f"{len(n.inputs)}I", *n.inputs)
        w.pack("HHH", n.stride, n.padding, n.window)
        flags = (
            (F_WEIGHT if n.weight is not None else 0)
            | (F_BIAS if n.bias is not None else 0)
            | (F_BN if n.bn is not None else 0)
            | (F_QPARAMS if n.qparams is not None else 0)
            | (F_REQUANT if n.requant is not None else 0)
            | (F_OBSERVER if n.observer is not None else 0)
        )
        w.pack("B", flags)
        if n.weight is not None:
            shape = n.weight.shape
            w.pack("B", len(shape))
            w.pack(f"{len(shape)}I", *shape)
            if isinstance(n.weight, QuantTensor):
                qs = n.weight.qscheme
                plist = qs.params if isinstance(qs, PerChannel) else (qs.params,)
                w.pack("BBI", int(isinstance(qs, PerChannel)), getattr(qs, "axis", 0), len(plist))
                for p in plist:
                    _write_params(w, p)
                w.array(n.weight.data, np.int8)
            else:
                w.array(n.weight, np.float32)
        if n.bias is not None:
            w.pack("I", len(n.bias))
            w.array(n.bias, np.int32 if quantized else np.float32)
        if n.bn is not None:
            w.pack("I", len(n.bn.gamma))
            for arr in (n.bn.gamma, n.bn.beta, n.bn.mean, n.bn.var):
                w.array(arr, np.float32)
            w.pack("dd", n.bn.eps, n.bn.momentum)
        if n.qparams is not None:
            _write_params(w, n.qparams)
        if n.requant is not None:
            w.pack("I", n.requant.multiplier.size)
            w.array(n.requant.multiplier, np.float64)
        if n.observer is not None:
            if n.observer.axis is not None:
                raise ModelFormatError("per-channel activation observers are not serializable")
            o = n.observer
            w.pack("Qdd", o.count, o.lo if o.count else 0.0, o.hi if o.count else 0.0)
    return bytes(w.buf)


def from_bytes(data: bytes) -> LayerGraph:
    r = _Reader(data)
    if len(data) < 4 or bytes(r.take(4)) != MAGIC:
        raise BadMagicError("not a QWID model file (bad magic)")
    version = r.unpack("H")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported model format version {version}")
    mode_code, count = r.unpack("BI")
    if mode_code not in _MODES:
        raise ModelFormatError(f"unknown mode byte {mode_code}")
    mode = _MODES[mode_code]
    quantized = mode == INT8
    rank = r.unpack("B")
    input_shape = tuple(r.array(np.uint32, rank).tolist())
    nodes = []
    for nid in range(count):
        code, n_in = r.unpack("BB")
        if code >= len(KINDS):
            raise ModelFormatError(f"unknown node kind code {code}")
        inputs = r.array(np.uint32, n_in).tolist()
        stride, padding, window = r.unpack("HHH")
        flags = r.unpack("B")
        node = Node(nid, KINDS[code], inputs, stride=stride, padding=padding, window=window)
        if flags & F_WEIGHT:
            wrank = r.unpack("B")
            shape = tuple(r.array(np.uint32, wrank).tolist())
            size = int(np.prod(shape))
            if quantized:
                per_channel, axis, k = r.unpack("BBI")
                plist = tuple(_read_params(r) for _ in range(k))
                scheme = PerChannel(axis, plist) if per_channel else PerTensor(plist[0])
                node.weight = QuantTensor(r.array(np.int8, size).reshape(shape), scheme)
            else:
                node.weight = r.array(np.float32, size).reshape(shape)
        if flags & F_BIAS:
            length = r.unpack("I")
            node.bias = r.array(np.int32 if quantized else np.float32, length)
        if flags & F_BN:
            c = r.unpack("I")
            arrs = [r.array(np.float32, c) for _ in range(4)]
            eps, momentum = r.unpack("dd")
            node.bn = BatchNorm(*arrs, eps=eps, momentum=momentum)
        if flags & F_QPARAMS:
            node.qparams = _read_params(r)
        if flags & F_REQUANT:
            k = r.unpack("I")
            mult = r.array(np.float64, k)
            if node.qparams is None:
                raise ModelFormatError(f"node {nid} has requant multipliers but no output params")
            node.requant = RequantSpec(mult, node.qparams)
        if flags & F_OBSERVER:
            cnt, lo, hi = r.unpack("Qdd")
            node.observer = MinMaxObserver(None, lo if cnt else None, hi if cnt else None, cnt)
        nodes.append(node)
    if r.pos != len(data):
        raise ModelFormatError(f"{len(data) - r.pos} trailing bytes after the last node")
    return LayerGraph(nodes, mode, input_shape).validate()


def save(g: LayerGraph, path) -> int:
    """Write ``g`` to ``path``; returns the number of bytes written."""
    blob = to_bytes(g)
    with open(path, "wb") as f:
        f.write(blob)
    return len(blob)


def load(path) -> LayerGraph:
    with open(path, "rb") as f:
        return from_bytes(f.read())


def model_size_bytes(path) -> int:
    return os.path.getsize(path)
