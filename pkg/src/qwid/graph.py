"""Layer graphs in three numeric modes and the passes between them.

A graph is an ordered list of nodes in topological order; node ``i`` has id
``i`` and the last node is the graph output. The pipeline is::

    fp32 graph --fold_bn--> --fuse--> --insert_fake_quant--> fake-quant graph
        --(QAT)--> --convert--> int8 graph

``forward`` runs any of the three modes. In int8 mode every tensor between
the quantize stub and the dequantize stub is a ``QuantTensor``.
"""
from __future__ import annotations

import copy
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from . import kernels as K
from .errors import ContractError, ConversionError, GraphError
from .observer import MinMaxObserver
from .quant import QuantParams, fake_quantize
from .tensor import (
    PerTensor,
    QuantTensor,
    dequantize_tensor,
    per_channel_params,
    quantize_tensor,
)

FP32, FAKE_QUANT, INT8 = "fp32", "fake-quant", "int8"
MODES = (FP32, FAKE_QUANT, INT8)

KINDS = (
    "input",
    "conv",
    "linear",
    "relu",
    "add",
    "maxpool",
    "gavgpool",
    "batchnorm",
    "fused-conv-relu",
    "fused-conv-bn-relu",
    "concat",
    "quantize-stub",
    "dequantize-stub",
    "fake-quant",
)
CONV_KINDS = ("conv", "fused-conv-relu", "fused-conv-bn-relu")
WEIGHTED_KINDS = CONV_KINDS + ("linear",)
# nodes whose output gets an observed fake-quant during QAT
FQ_AFTER = ("conv", "fused-conv-relu", "linear", "add", "concat")


@dataclass
class BatchNorm:
    gamma: np.ndarray
    beta: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.1

    @classmethod
    def identity(cls, channels: int, eps: float = 1e-5) -> "BatchNorm":
        return cls(
            np.ones(channels, np.float32),
            np.zeros(channels, np.float32),
            np.zeros(channels, np.float32),
            np.ones(channels, np.float32),
            eps,
        )


@dataclass
class Node:
    id: int
    kind: str
    inputs: list[int] = field(default_factory=list)
    weight: np.ndarray | QuantTensor | None = None
    bias: np.ndarray | None = None  # float32, or int32 at scale s_x*s_w in int8 mode
    stride: int = 1
    padding: int = 0
    window: int = 2
    bn: BatchNorm | None = None
    observer: MinMaxObserver | None = None
    qparams: QuantParams | None = None  # int8 mode: params of this node's output
    requant: K.RequantSpec | None = None

    @property
    def spec(self) -> K.ConvSpec:
        return K.ConvSpec(self.stride, self.padding)


@dataclass
class LayerGraph:
    nodes: list[Node] = field(default_factory=list)
    mode: str = FP32
    input_shape: tuple[int, ...] = (3, 32, 32)

    def __post_init__(self):
        if self.mode not in MODES:
            raise GraphError(f"unknown mode {self.mode!r}")

    @property
    def output(self) -> Node:
        if not self.nodes:
            raise GraphError("empty graph has no output")
        return self.nodes[-1]

    def consumers(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = defaultdict(list)
        for n in self.nodes:
            for i in n.inputs:
                out[i].append(n.id)
        return out

    def validate(self):
        for idx, n in enumerate(self.nodes):
            if n.id != idx:
                raise GraphError(f"node at position {idx} has id {n.id}")
            if n.kind not in KINDS:
                raise GraphError(f"unknown node kind {n.kind!r}")
            if any(not 0 <= i < idx for i in n.inputs):
                raise GraphError(f"node {idx} ({n.kind}) references a later or missing node")
            if n.kind == "add" and len(n.inputs) != 2:
                raise GraphError(f"add node {idx} needs exactly two inputs")
            if n.kind in ("input", "quantize-stub"):
                if n.inputs:
                    raise GraphError(f"{n.kind} node {idx} takes no inputs")
            elif not n.inputs:
                raise GraphError(f"node {idx} ({n.kind}) has no inputs")
            if self.mode == INT8 and n.kind in WEIGHTED_KINDS:
                if not isinstance(n.weight, QuantTensor) or n.requant is None:
                    raise GraphError(f"int8 node {idx} lacks quantized weights or requant spec")
            if self.mode != INT8 and n.kind in ("quantize-stub", "dequantize-stub"):
                raise GraphError(f"{n.kind} only exists in int8 graphs")
            if self.mode != FAKE_QUANT and n.kind == "fake-quant":
                raise GraphError("fake-quant nodes only exist in fake-quant graphs")
        used = {i for n in self.nodes for i in n.inputs}
        sinks = [n.id for n in self.nodes[:-1] if n.id not in used]
        if sinks:
            raise GraphError(f"graph must have exactly one output; nodes {sinks} are unused")
        return self


def _as_float(a) -> np.ndarray:
    # float64 survives (gradient checks); everything else is stored as float32
    a = np.asarray(a)
    return a if a.dtype == np.float64 else a.astype(np.float32)


class GraphBuilder:
    """Append-only helper that hands out node ids."""

    def __init__(self, input_shape=(3, 32, 32)):
        self.graph = LayerGraph([], FP32, tuple(input_shape))

    def _add(self, kind, inputs, **kw) -> int:
        nid = len(self.graph.nodes)
        self.graph.nodes.append(Node(nid, kind, list(inputs), **kw))
        return nid

    def input(self) -> int:
        return self._add("input", [])

    def conv(self, src, weight, bias=None, stride=1, padding=0) -> int:
        weight = _as_float(weight)
        bias = np.zeros(weight.shape[0], weight.dtype) if bias is None else _as_float(bias)
        return self._add("conv", [src], weight=weight, bias=bias, stride=stride, padding=padding)

    def linear(self, src, weight, bias=None) -> int:
        weight = _as_float(weight)
        bias = np.zeros(weight.shape[0], weight.dtype) if bias is None else _as_float(bias)
        return self._add("linear", [src], weight=weight, bias=bias)

    def batchnorm(self, src, bn: BatchNorm) -> int:
        return self._add("batchnorm", [src], bn=bn)

    def relu(self, src) -> int:
        return self._add("relu", [src])

    def add(self, a, b) -> int:
        return self._add("add", [a, b])

    def concat(self, *srcs) -> int:
        return self._add("concat", list(srcs))

    def maxpool(self, src, window=2, stride=None) -> int:
        return self._add("maxpool", [src], window=window, stride=window if stride is None else stride)

    def gavgpool(self, src) -> int:
        return self._add("gavgpool", [src])

    def build(self) -> LayerGraph:
        return self.graph.validate()


# ------------------------------------------------------------------ forward


def fake_quantize_weight(w: np.ndarray) -> np.ndarray:
    """Per-output-channel symmetric fake quantization of a weight tensor."""
    scheme = per_channel_params(w)
    shape = (-1,) + (1,) * (w.ndim - 1)
    s = scheme.scales().reshape(shape)
    q = np.clip(np.rint(w / s), -128, 127)
    return (q * s).astype(w.dtype)


def _conv_float(g, node, x, training, cache):
    w = node.weight
    if g.mode == FAKE_QUANT:
        w = fake_quantize_weight(w)
    y, cols = K.conv2d_forward(x, w.astype(x.dtype, copy=False), node.bias.astype(x.dtype, copy=False), node.spec)
    entry = {"cols": cols, "x_shape": x.shape, "w": w}
    if node.kind == "fused-conv-bn-relu":
        y = _bn_float(node.bn, y, training, entry)
    if node.kind != "conv":
        entry["mask"] = y > 0
        y = K.relu_f32(y)
    if cache is not None:
        cache[node.id] = entry
    return y


def _bn_float(bn: BatchNorm, x, training, entry):
    if not training:
        return K.batchnorm_f32(x, bn.gamma, bn.beta, bn.mean, bn.var, bn.eps)
    y, mu, var, xhat, inv_std = K.batchnorm_train(x, bn.gamma.astype(x.dtype), bn.beta.astype(x.dtype), bn.eps)
    n = x.shape[0] * x.shape[2] * x.shape[3]
    unbiased = var * n / max(n - 1, 1)
    bn.mean[...] = (1 - bn.momentum) * bn.mean + bn.momentum * mu
    bn.var[...] = (1 - bn.momentum) * bn.var + bn.momentum * unbiased
    if entry is not None:
        entry["bn"] = (xhat, inv_std)
    return y


def _eval_float(g: LayerGraph, node: Node, args, training, calibrate, cache):
    k = node.kind
    if k in CONV_KINDS:
        return _conv_float(g, node, args[0], training, cache)
    if k == "linear":
        x = args[0]
        w = fake_quantize_weight(node.weight) if g.mode == FAKE_QUANT else node.weight
        if cache is not None:
            cache[node.id] = {"x": x, "w": w}
        return K.linear_f32(x, w.astype(x.dtype, copy=False), node.bias.astype(x.dtype, copy=False))
    if k == "relu":
        if cache is not None:
            cache[node.id] = {"mask": args[0] > 0}
        return K.relu_f32(args[0])
    if k == "add":
        return K.add_f32(args[0], args[1])
    if k == "concat":
        if cache is not None:
            cache[node.id] = {"sizes": [a.shape[1] for a in args]}
        return K.concat_f32(args)
    if k == "maxpool":
        if cache is not None:
            cache[node.id] = {"x": args[0]}
        return K.maxpool2d(args[0], node.window, node.stride)
    if k == "gavgpool":
        if cache is not None:
            cache[node.id] = {"x_shape": args[0].shape}
        return K.global_avgpool(args[0])
    if k == "batchnorm":
        entry = {} if cache is not None else None
        y = _bn_float(node.bn, args[0], training, entry)
        if cache is not None:
            cache[node.id] = entry
        return y
    if k == "fake-quant":
        x = args[0]
        if training or calibrate:
            node.observer.observe(x)
        if node.observer.count == 0:
            raise GraphError(f"fake-quant node {node.id} has an empty observer; calibrate first")
        p = node.observer.finalize()
        if cache is not None:
            q = np.rint(x / p.scale + p.zero_point)
            cache[node.id] = {"mask": (q >= p.qmin) & (q <= p.qmax)}
        return fake_quantize(x, p)
    raise GraphError(f"node kind {k!r} cannot run in {g.mode} mode")


def _eval_int8(node: Node, args):
    k = node.kind
    if k == "quantize-stub":
        return quantize_tensor(args[0], params=node.qparams)
    if k == "dequantize-stub":
        return dequantize_tensor(args[0])
    if k in ("conv", "fused-conv-relu"):
        return K.qconv2d(args[0], node.weight, node.bias, node.spec, node.requant, relu=k != "conv")
    if k == "linear":
        return K.qlinear(args[0], node.weight, node.bias, node.requant)
    if k == "relu":
        return K.qrelu(args[0], node.qparams)
    if k == "add":
        return K.qadd(args[0], args[1], node.qparams)
    if k == "concat":
        return K.qconcat(list(args), node.qparams)
    if k == "maxpool":
        return K.maxpool2d(args[0], node.window, node.stride)
    if k == "gavgpool":
        return K.global_avgpool(args[0], node.qparams)
    raise GraphError(f"node kind {k!r} cannot run in int8 mode")


def forward(
    g: LayerGraph,
    x: np.ndarray,
    training: bool = False,
    calibrate: bool = False,
    cache: dict | None = None,
    reference: bool = False,
) -> np.ndarray:
    """Run the graph on a float batch ``(N, C, H, W)`` and return float logits.

    ``training`` switches batch norm to batch statistics and lets observers
    update; ``calibrate`` updates observers without touching batch norm.
    ``cache`` (a dict) receives per-node activations needed by backward.
    Int8 graphs run through the compiled engine unless ``reference`` asks
    for the node-by-node kernel path (the results are identical).
    """
    if not g.nodes:
        raise GraphError("cannot run an empty graph")
    x = np.asarray(x)
    if x.ndim != 4 or tuple(x.shape[1:]) != tuple(g.input_shape):
        raise GraphError(f"input shape {x.shape} does not match graph input {g.input_shape}")
    if g.mode == INT8 and (training or calibrate):
        raise GraphError("int8 graphs are inference-only")
    if g.mode == INT8 and not reference:
        return int8_program(g).run(x)
    values: dict[int, object] = {}
    remaining = defaultdict(int)
    for n in g.nodes:
        for i in n.inputs:
            remaining[i] += 1
    for node in g.nodes:
        args = [values[i] for i in node.inputs]
        if node.kind == "input" or (node.kind == "quantize-stub" and g.mode == INT8 and not node.inputs):
            if node.kind == "input":
                out = x if x.dtype in (np.float32, np.float64) else x.astype(np.float32)
            else:
                out = quantize_tensor(x, params=node.qparams)
        elif g.mode == INT8:
            out = _eval_int8(node, args)
        else:
            out = _eval_float(g, node, args, training, calibrate, cache)
        values[node.id] = out
        if cache is None:
            for i in node.inputs:
                remaining[i] -= 1
                if remaining[i] == 0:
                    del values[i]
    out = values[g.nodes[-1].id]
    if cache is not None:
        cache["_out_shape"] = out.shape
    if isinstance(out, QuantTensor):
        out = dequantize_tensor(out)
    return out.reshape(out.shape[0], -1)


def _fingerprint(g: LayerGraph):
    return tuple((id(n), id(n.weight), id(n.bias), id(n.requant), id(n.qparams), tuple(n.inputs)) for n in g.nodes)


def int8_program(g: LayerGraph):
    """Compiled engine for an int8 graph, cached on the graph object."""
    from .engine import compile_int8

    key = _fingerprint(g)
    cached = g.__dict__.get("_program")
    if cached is None or cached[0] != key:
        cached = (key, compile_int8(g))
        g.__dict__["_program"] = cached
    return cached[1]


# ----------------------------------------------------------------- rewrites


def _compact(nodes: list[Node], alias: dict[int, int], mode: str, input_shape) -> LayerGraph:
    """Renumber surviving nodes, redirecting references through ``alias``."""

    def resolve(i):
        while i in alias:
            i = alias[i]
        return i

    new_id = {}
    out = []
    for n in nodes:
        n.inputs = [new_id[resolve(i)] for i in n.inputs]
        new_id[n.id] = len(out)
        n.id = len(out)
        out.append(n)
    return LayerGraph(out, mode, tuple(input_shape)).validate()


def fold_batchnorm(w, b, gamma, beta, mean, var, eps):
    """Fold inference batch norm into the preceding conv/linear weights."""
    c = w.shape[0]
    if not (len(gamma) == len(beta) == len(mean) == len(var) == c):
        from .errors import ShapeError

        raise ShapeError(f"batchnorm parameters do not match {c} output channels")
    b = np.zeros(c, w.dtype) if b is None else b
    k = (np.asarray(gamma, np.float64) / np.sqrt(np.asarray(var, np.float64) + eps))
    w2 = (w.astype(np.float64) * k.reshape((-1,) + (1,) * (w.ndim - 1))).astype(w.dtype)
    b2 = (beta + (b.astype(np.float64) - mean) * k).astype(w.dtype)
    return w2, b2


def fold_bn(g: LayerGraph) -> LayerGraph:
    """Fold every batch norm that directly follows a conv into that conv.

    ``conv -> batchnorm`` (batch norm the conv's sole consumer) becomes one
    ``conv``; ``fused-conv-bn-relu`` becomes ``fused-conv-relu``.
    """
    g = copy.deepcopy(g)
    if g.mode != FP32:
        raise ContractError("batch-norm folding runs on fp32 graphs")
    cons = g.consumers()
    by_id = {n.id: n for n in g.nodes}
    alias, keep = {}, []
    for n in g.nodes:
        if n.kind == "fused-conv-bn-relu":
            n.weight, n.bias = fold_batchnorm(n.weight, n.bias, n.bn.gamma, n.bn.beta, n.bn.mean, n.bn.var, n.bn.eps)
            n.kind, n.bn = "fused-conv-relu", None
        elif n.kind == "batchnorm":
            src = by_id[n.inputs[0]]
            if src.kind == "conv" and cons[src.id] == [n.id]:
                src.weight, src.bias = fold_batchnorm(
                    src.weight, src.bias, n.bn.gamma, n.bn.beta, n.bn.mean, n.bn.var, n.bn.eps
                )
                alias[n.id] = src.id
                continue
        keep.append(n)
    return _move_to_last_use(keep, alias, g)


def _move_to_last_use(keep, alias, g):
    # A merged node must sit where its absorbed tail sat so the graph output
    # stays last and every consumer still follows its producer.
    pos = {n.id: i for i, n in enumerate(g.nodes)}
    target = {}
    for removed, survivor in alias.items():
        target[survivor] = max(target.get(survivor, -1), pos[removed])
    keep.sort(key=lambda n: target.get(n.id, pos[n.id]))
    return _compact(keep, alias, g.mode, g.input_shape)


def fuse(g: LayerGraph) -> LayerGraph:
    """Merge ``conv -> relu`` and ``conv -> batchnorm -> relu`` chains.

    A chain is only fused when each link is the sole consumer of its
    predecessor; anything else passes through untouched.
    """
    if g.mode != FP32:
        raise ContractError("fusion runs on fp32 graphs")
    g = copy.deepcopy(g)
    cons = g.consumers()
    by_id = {n.id: n for n in g.nodes}
    alias = {}
    for n in g.nodes:
        if n.kind != "conv" or len(cons[n.id]) != 1:
            continue
        nxt = by_id[cons[n.id][0]]
        if nxt.kind == "relu":
            n.kind = "fused-conv-relu"
            alias[nxt.id] = n.id
        elif nxt.kind == "batchnorm" and len(cons[nxt.id]) == 1:
            last = by_id[cons[nxt.id][0]]
            if last.kind == "relu":
                n.kind, n.bn = "fused-conv-bn-relu", nxt.bn
                alias[nxt.id] = n.id
                alias[last.id] = n.id
    keep = [n for n in g.nodes if n.id not in alias]
    return _move_to_last_use(keep, alias, g)


def is_fused(g: LayerGraph) -> bool:
    cons = g.consumers()
    by_id = {n.id: n for n in g.nodes}
    for n in g.nodes:
        if n.kind == "conv" and len(cons[n.id]) == 1 and by_id[cons[n.id][0]].kind in ("relu", "batchnorm"):
            return False
    return True


def insert_fake_quant(g: LayerGraph) -> LayerGraph:
    """Place observed fake-quant nodes on the input and after conv/linear/add/concat.

    The graph must be fused with all batch norms folded. Weights are not given
    nodes of their own; they are fake-quantized per channel at use time.
    """
    if g.mode != FP32:
        raise ContractError("fake-quant insertion starts from an fp32 graph")
    if not is_fused(g):
        raise ContractError("graph must be fused before inserting fake-quant nodes")
    if any(n.kind in ("batchnorm", "fused-conv-bn-relu") for n in g.nodes):
        raise ContractError("fold batch norms before inserting fake-quant nodes")
    g = copy.deepcopy(g)
    nodes: list[Node] = []
    remap: dict[int, int] = {}
    for n in g.nodes:
        old = n.id
        n.inputs = [remap[i] for i in n.inputs]
        n.id = len(nodes)
        nodes.append(n)
        remap[old] = n.id
        if n.kind == "input" or n.kind in FQ_AFTER:
            fq = Node(len(nodes), "fake-quant", [n.id], observer=MinMaxObserver())
            nodes.append(fq)
            remap[old] = fq.id
    return LayerGraph(nodes, FAKE_QUANT, g.input_shape).validate()


def prepare_qat(g: LayerGraph) -> LayerGraph:
    """fp32 graph -> folded, fused, fake-quant graph ready for QAT."""
    return insert_fake_quant(fuse(fold_bn(g)))


def convert(g: LayerGraph) -> LayerGraph:
    """Freeze observers and lower a fake-quant graph to integer-only inference.

    Weights become per-channel symmetric int8, activations per-tensor
    asymmetric int8 with params taken from the fake-quant node that follows
    each producer. Fake-quant nodes disappear; a quantize stub replaces the
    input and a dequantize stub is appended after the output.
    """
    if g.mode != FAKE_QUANT:
        raise ConversionError(f"convert expects a fake-quant graph, got {g.mode}")
    g = copy.deepcopy(g)
    cons = g.consumers()
    by_id = {n.id: n for n in g.nodes}

    def observed_params(n: Node) -> QuantParams | None:
        fq = [by_id[c] for c in cons[n.id] if by_id[c].kind == "fake-quant"]
        if not fq:
            return None
        if fq[0].observer is None or fq[0].observer.count == 0:
            raise ConversionError(f"fake-quant node {fq[0].id} has no observed range")
        return fq[0].observer.finalize()

    params: dict[int, QuantParams] = {}
    alias, keep = {}, []
    for n in g.nodes:
        if n.kind == "fake-quant":
            if n.observer is None or n.observer.count == 0:
                raise ConversionError(f"fake-quant node {n.id} has no observed range")
            alias[n.id] = n.inputs[0]
            params[n.id] = params[n.inputs[0]]
            continue
        own = observed_params(n)
        if n.kind == "input":
            if own is None:
                raise ConversionError("graph input has no fake-quant observer")
            n.kind, n.qparams = "quantize-stub", own
        elif n.kind in ("conv", "fused-conv-relu", "linear"):
            if own is None:
                raise ConversionError(f"{n.kind} node {n.id} has no output observer")
            s_x = params[n.inputs[0]].scale
            wq = quantize_tensor(n.weight, per_channel=True)
            n.bias = K.quantize_bias(n.bias, s_x, wq)
            n.weight = wq
            n.requant = K.make_requant(s_x, wq, own)
            n.qparams = own
        elif n.kind in ("add", "concat"):
            if own is None:
                raise ConversionError(f"{n.kind} node {n.id} has no output observer")
            n.qparams = own
        elif n.kind in ("relu", "gavgpool"):
            n.qparams = own or params[n.inputs[0]]
        elif n.kind == "maxpool":
            n.qparams = params[n.inputs[0]]
            if own is not None and own != n.qparams:
                raise ConversionError("max-pool cannot change quantization parameters")
        else:
            raise ConversionError(f"cannot convert node kind {n.kind!r}")
        params[n.id] = n.qparams
        keep.append(n)
    last = len(g.nodes)
    keep.append(Node(last, "dequantize-stub", [g.nodes[-1].id]))
    out = _compact(keep, alias, INT8, g.input_shape)
    return out


# ----------------------------------------------------------------- analysis


def infer_shapes(g: LayerGraph, batch: int = 1) -> dict[int, tuple[int, ...]]:
    """Output shape of every node for a given batch size."""
    shapes: dict[int, tuple[int, ...]] = {}
    for n in g.nodes:
        ins = [shapes[i] for i in n.inputs]
        k = n.kind
        if k in ("input", "quantize-stub") and not n.inputs:
            s = (batch,) + tuple(g.input_shape)
        elif k in CONV_KINDS:
            cout, _, fh, fw = n.weight.shape
            ho, wo = n.spec.output_hw(ins[0][2], ins[0][3], fh, fw)
            s = (batch, cout, ho, wo)
        elif k == "linear":
            s = (batch, n.weight.shape[0])
        elif k == "maxpool":
            _, c, h, w = ins[0]
            s = (batch, c, (h - n.window) // n.stride + 1, (w - n.window) // n.stride + 1)
        elif k == "gavgpool":
            s = (batch, ins[0][1], 1, 1)
        elif k == "concat":
            s = (batch, sum(i[1] for i in ins)) + tuple(ins[0][2:])
        elif k == "dequantize-stub" or k == "fake-quant" or k in ("relu", "add", "batchnorm"):
            s = ins[0]
        else:
            raise GraphError(f"cannot infer shape for {k!r}")
        shapes[n.id] = s
    return shapes


def node_ops(g: LayerGraph, shapes=None) -> dict[int, int]:
    """Operation count per node for one image.

    conv/linear count ``2*MACs``; relu/add/pool count one op per output
    element; a fused conv-relu counts both parts. Batch norm counts zero
    because inference folds it into the conv, so a graph and its converted
    form report identical totals.
    """
    shapes = infer_shapes(g) if shapes is None else shapes
    ops = {}
    for n in g.nodes:
        out = shapes[n.id]
        elems = int(np.prod(out))
        k = n.kind
        if k in CONV_KINDS:
            cout, cin, fh, fw = n.weight.shape
            c = 2 * fh * fw * cin * cout * out[2] * out[3]
            ops[n.id] = c + (elems if k != "conv" else 0)
        elif k == "linear":
            cout, cin = n.weight.shape
            ops[n.id] = 2 * cin * cout
        elif k in ("relu", "add", "maxpool", "gavgpool"):
            ops[n.id] = elems
        else:
            ops[n.id] = 0
    return ops


def count_ops(g: LayerGraph) -> int:
    """Total operations for one forward pass (FLOPs in fp32, OPs in int8)."""
    if not g.nodes:
        return 0
    return sum(node_ops(g).values())


_NO_FOOTPRINT = ("input", "quantize-stub", "dequantize-stub", "fake-quant")


def node_footprints(g: LayerGraph) -> dict[int, int]:
    """Input plus output activation bytes per compute node, batch 1."""
    shapes = infer_shapes(g)
    width = 1 if g.mode == INT8 else 4
    out = {}
    for n in g.nodes:
        if n.kind in _NO_FOOTPRINT:
            continue
        elems = int(np.prod(shapes[n.id])) + sum(int(np.prod(shapes[i])) for i in n.inputs)
        out[n.id] = elems * width
    return out


def memory_footprint(g: LayerGraph) -> int:
    """Largest activation memory any single layer needs for one image.

    Stubs, the input placeholder and fake-quant nodes are excluded so that
    an int8 graph reports exactly a quarter of its fp32 counterpart.
    """
    fp = node_footprints(g)
    return max(fp.values(), default=0)


def num_parameters(g: LayerGraph) -> int:
    total = 0
    for n in g.nodes:
        if n.weight is not None:
            total += int(np.prod(n.weight.shape))
        if n.bias is not None:
            total += len(n.bias)
        if n.bn is not None:
            total += 2 * len(n.bn.gamma)
    return total
