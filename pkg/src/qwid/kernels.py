"""Float reference kernels and integer int8 kernels.

Float kernels are dtype-preserving (float32 in normal use, float64 for
gradient checks). Integer kernels take ``QuantTensor`` inputs, accumulate
``(x_q - z_x) * w_q`` plus an int32 bias in 32-bit integers and requantize
with a real multiplier ``M = s_x * s_w / s_y``.

Integer matrix products are evaluated through BLAS on float operands. This is
exact: every partial sum is an integer bounded by ``K * 255 * 127``, which is
checked against the float mantissa before picking float32 (< 2**24) or
float64 (< 2**53).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import as_strided, sliding_window_view

from .errors import ContractError, ShapeError
from .quant import QuantParams
from .tensor import PerTensor, QuantTensor

# |x_q - z_x| <= 255, |w_q| <= 127 for int8 operands
_MAX_PRODUCT = 255 * 127
ACC_MIN, ACC_MAX = -(2**31), 2**31 - 1


@dataclass(frozen=True)
class ConvSpec:
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.stride < 1 or self.padding < 0:
            raise ShapeError(f"invalid conv spec stride={self.stride} padding={self.padding}")

    def output_hw(self, h: int, w: int, fh: int, fw: int) -> tuple[int, int]:
        ho = (h + 2 * self.padding - fh) // self.stride + 1
        wo = (w + 2 * self.padding - fw) // self.stride + 1
        if ho < 1 or wo < 1:
            raise ShapeError(f"filter {fh}x{fw} does not fit input {h}x{w} with {self}")
        return ho, wo


@dataclass(frozen=True)
class RequantSpec:
    """Multiplier(s) taking the int32 accumulator onto the output grid."""

    multiplier: np.ndarray  # float64, shape (c_out,) or (1,)
    output: QuantParams

    def __post_init__(self):
        m = np.atleast_1d(np.asarray(self.multiplier, dtype=np.float64))
        if not np.all(m > 0):
            raise ContractError("requantization multiplier must be positive")
        object.__setattr__(self, "multiplier", m)


def make_requant(x_scale: float, w: QuantTensor, output: QuantParams) -> RequantSpec:
    return RequantSpec(x_scale * np.ravel(w.scale_array()) / output.scale, output)


def quantize_bias(b: np.ndarray, x_scale: float, w: QuantTensor) -> np.ndarray:
    """Bias on the accumulator grid: scale ``s_x * s_w`` (per channel), zero point 0."""
    s = x_scale * np.ravel(w.scale_array()).astype(np.float64)
    q = np.rint(np.asarray(b, dtype=np.float64) / s)
    return np.clip(q, ACC_MIN, ACC_MAX).astype(np.int32)


# --------------------------------------------------------------------- float


def _check_conv_shapes(x: np.ndarray, w: np.ndarray):
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv expects 4-D input and weight, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"input has {x.shape[1]} channels, weight expects {w.shape[1]}")


def im2col(x: np.ndarray, fh: int, fw: int, spec: ConvSpec, pad_value=0) -> np.ndarray:
    """Patches as a ``(N*Ho*Wo, C*fh*fw)`` matrix."""
    n, c, h, w = x.shape
    ho, wo = spec.output_hw(h, w, fh, fw)
    p, st = spec.padding, spec.stride
    if p:
        xp = np.full((n, c, h + 2 * p, w + 2 * p), pad_value, dtype=x.dtype)
        xp[:, :, p : p + h, p : p + w] = x
        x = xp
    s0, s1, s2, s3 = x.strides
    win = as_strided(x, (n, ho, wo, c, fh, fw), (s0, s2 * st, s3 * st, s1, s2, s3), writeable=False)
    return win.reshape(n * ho * wo, c * fh * fw)


def col2im(dcols: np.ndarray, x_shape, fh: int, fw: int, spec: ConvSpec) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add patch gradients back to the input."""
    n, c, h, w = x_shape
    ho, wo = spec.output_hw(h, w, fh, fw)
    p, s = spec.padding, spec.stride
    d = dcols.reshape(n, ho, wo, c, fh, fw)
    dx = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=dcols.dtype)
    for i in range(fh):
        for j in range(fw):
            dx[:, :, i : i + s * (ho - 1) + 1 : s, j : j + s * (wo - 1) + 1 : s] += d[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    if p:
        dx = dx[:, :, p:-p, p:-p]
    return dx


def conv2d_forward(x, w, b, spec: ConvSpec):
    """Float convolution returning ``(y, cols)``; ``cols`` is kept for backward."""
    _check_conv_shapes(x, w)
    n, _, h, wd = x.shape
    cout, _, fh, fw = w.shape
    if b is not None and len(b) != cout:
        raise ShapeError(f"bias length {len(b)} != {cout} output channels")
    ho, wo = spec.output_hw(h, wd, fh, fw)
    cols = im2col(x, fh, fw, spec)
    y = cols @ w.reshape(cout, -1).T
    if b is not None:
        y += b
    y = np.ascontiguousarray(y.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2))
    return y, cols


def conv2d_f32(x, w, b, spec: ConvSpec = ConvSpec()):
    """Cross-correlation with zero padding plus per-output-channel bias."""
    return conv2d_forward(x, w, b, spec)[0]


def linear_f32(x, w, b):
    x2 = x.reshape(x.shape[0], -1)
    if x2.shape[1] != w.shape[1]:
        raise ShapeError(f"linear expects {w.shape[1]} features, got {x2.shape[1]}")
    y = x2 @ w.T
    if b is not None:
        y += b
    return y


def relu_f32(x):
    return np.maximum(x, 0)


def add_f32(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"add operands differ: {a.shape} vs {b.shape}")
    return a + b


def _pool_windows(x, window: int, stride: int):
    if x.ndim != 4:
        raise ShapeError(f"pooling expects NCHW input, got {x.shape}")
    if window < 1 or stride < 1:
        raise ShapeError("window and stride must be positive")
    if window > x.shape[2] or window > x.shape[3]:
        raise ShapeError(f"window {window} larger than input {x.shape[2:]}")
    return sliding_window_view(x, (window, window), axis=(2, 3))[:, :, ::stride, ::stride]


def _maxpool(x, window, stride):
    if x.ndim != 4 or window < 1 or stride < 1:
        raise ShapeError(f"invalid pooling of {x.shape} with window {window}, stride {stride}")
    n, c, h, w = x.shape
    if window > h or window > w:
        raise ShapeError(f"window {window} larger than input {x.shape[2:]}")
    ho, wo = (h - window) // stride + 1, (w - window) // stride + 1
    out = None
    for i in range(window):
        for j in range(window):
            tap = x[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride]
            out = tap.copy() if out is None else np.maximum(out, tap, out=out)
    return out


def maxpool2d(x, window: int = 2, stride: int | None = None):
    """Max over each window. Quantized input keeps its QuantParams unchanged."""
    stride = window if stride is None else stride
    if isinstance(x, QuantTensor):
        return QuantTensor(_maxpool(x.data, window, stride), x.qscheme)
    return _maxpool(x, window, stride)


def global_avgpool(x, out: QuantParams | None = None):
    """Mean over spatial dims, shape ``(N, C, 1, 1)``.

    The quantized path sums ``x_q - z_x`` in int32 and rescales by
    ``s_x / (H * W * s_y)``; ``out`` defaults to the input params.
    """
    if isinstance(x, QuantTensor):
        p = x.params
        out = p if out is None else out
        h, w = x.shape[2], x.shape[3]
        acc = (x.data.astype(np.int32) - p.zero_point).sum(axis=(2, 3), keepdims=True, dtype=np.int32)
        m = p.scale / (h * w * out.scale)
        y = np.clip(np.rint(m * acc) + out.zero_point, out.qmin, out.qmax)
        return QuantTensor(y.astype(np.int8), PerTensor(out))
    return x.mean(axis=(2, 3), keepdims=True)


def batchnorm_f32(x, gamma, beta, mean, var, eps: float = 1e-5):
    """Inference-mode batch norm with running statistics."""
    c = x.shape[1]
    for name, arr in (("gamma", gamma), ("beta", beta), ("mean", mean), ("var", var)):
        if len(arr) != c:
            raise ShapeError(f"batchnorm {name} has {len(arr)} entries for {c} channels")
    shape = (1, c, 1, 1)
    inv = (gamma / np.sqrt(var + eps)).astype(x.dtype)
    return (x - mean.reshape(shape).astype(x.dtype)) * inv.reshape(shape) + beta.reshape(shape).astype(x.dtype)


def batchnorm_train(x, gamma, beta, eps: float = 1e-5):
    """Training-mode batch norm over (N, H, W).

    Returns ``(y, batch_mean, batch_var, xhat, inv_std)``; ``batch_var`` is the
    biased estimate used for normalization.
    """
    c = x.shape[1]
    if len(gamma) != c or len(beta) != c:
        raise ShapeError(f"batchnorm parameters do not match {c} channels")
    mu = x.mean(axis=(0, 2, 3))
    var = x.var(axis=(0, 2, 3))
    inv_std = 1.0 / np.sqrt(var + eps)
    shape = (1, c, 1, 1)
    xhat = (x - mu.reshape(shape)) * inv_std.reshape(shape)
    y = xhat * gamma.reshape(shape) + beta.reshape(shape)
    return y.astype(x.dtype, copy=False), mu, var, xhat, inv_std


def concat_f32(xs):
    return np.concatenate(xs, axis=1)


# ------------------------------------------------------------------- integer


def _check_weight(w: QuantTensor):
    cache = w.__dict__.setdefault("_kernel_cache", {})
    if "symmetric" not in cache:
        cache["symmetric"] = bool(np.all(np.ravel(w.zero_point_array()) == 0))
    if not cache["symmetric"]:
        raise ContractError("integer kernels require symmetric weights (zero point 0)")


def _to_acc32(acc: np.ndarray) -> np.ndarray:
    if acc.size and (acc.min() < ACC_MIN or acc.max() > ACC_MAX):
        raise OverflowError("int32 accumulator overflow")
    return acc.astype(np.int32)


def _centered_input(x: QuantTensor, k: int):
    """``x_q - z_x`` in the narrowest float type that keeps the product exact."""
    dtype = np.float32 if k * _MAX_PRODUCT < 2**24 else np.float64
    xs = x.data.astype(dtype)
    xs -= x.params.zero_point
    return xs, dtype


def _conv_accumulate(x: QuantTensor, w: QuantTensor, bias, spec: ConvSpec):
    # exact accumulator as float64, layout (N*Ho*Wo, c_out)
    _check_weight(w)
    _check_conv_shapes(x.data, w.data)
    n, _, h, wd = x.shape
    cout, cin, fh, fw = w.shape
    ho, wo = spec.output_hw(h, wd, fh, fw)
    k = cin * fh * fw
    xs, dtype = _centered_input(x, k)
    cols = im2col(xs, fh, fw, spec, pad_value=0)  # padding with z_x == 0 after centering
    acc = _add_bias(cols @ _weight_matrix(w, dtype), bias, k)
    return acc, (n, ho, wo, cout)


def _weight_matrix(w: QuantTensor, dtype) -> np.ndarray:
    cache = w.__dict__.setdefault("_kernel_cache", {})
    if dtype not in cache:
        cache[dtype] = np.ascontiguousarray(w.data.reshape(w.shape[0], -1).T.astype(dtype))
    return cache[dtype]


def _add_bias(acc: np.ndarray, bias, k: int) -> np.ndarray:
    """float64 ``acc + bias``, with an int32 overflow check when one is possible."""
    bias = np.asarray(bias)
    bound = k * _MAX_PRODUCT + (int(np.abs(bias.astype(np.int64)).max()) if bias.size else 0)
    out = np.add(acc, bias, dtype=np.float64)
    if bound > ACC_MAX:
        _to_acc32(out)
    return out


def qconv2d_acc(x: QuantTensor, w: QuantTensor, bias, spec: ConvSpec) -> np.ndarray:
    """Raw int32 accumulator ``sum((x_q - z_x) * w_q) + bias`` in NCHW."""
    if bias is None:
        bias = np.zeros(w.shape[0], np.int32)
    acc, (n, ho, wo, cout) = _conv_accumulate(x, w, bias, spec)
    return _to_acc32(acc).reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)


def _requantize_rows(acc: np.ndarray, rq: RequantSpec, relu: bool) -> np.ndarray:
    # acc: (rows, c_out) float64 holding exact integers
    out = rq.output
    acc *= rq.multiplier if rq.multiplier.size > 1 else rq.multiplier[0]
    np.rint(acc, out=acc)
    acc += out.zero_point
    np.clip(acc, out.zero_point if relu else out.qmin, out.qmax, out=acc)
    return acc.astype(np.int8)


def qconv2d(
    x: QuantTensor, w: QuantTensor, bias, spec: ConvSpec, rq: RequantSpec | None,
    relu: bool = False,
) -> QuantTensor:
    """Integer convolution. ``relu=True`` folds ReLU into the output clamp."""
    if rq is None:
        raise ContractError("qconv2d needs requantization parameters")
    if rq.multiplier.size not in (1, w.shape[0]):
        raise ContractError(f"{rq.multiplier.size} multipliers for {w.shape[0]} channels")
    if bias is None:
        bias = np.zeros(w.shape[0], np.int32)
    acc, (n, ho, wo, cout) = _conv_accumulate(x, w, bias, spec)
    y = _requantize_rows(acc, rq, relu).reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)
    return QuantTensor(y, PerTensor(rq.output))


def qlinear(
    x: QuantTensor, w: QuantTensor, bias, rq: RequantSpec | None, relu: bool = False
) -> QuantTensor:
    if rq is None:
        raise ContractError("qlinear needs requantization parameters")
    _check_weight(w)
    if bias is None:
        bias = np.zeros(w.shape[0], np.int32)
    k = w.shape[1]
    xs, dtype = _centered_input(x, k)
    xs = xs.reshape(x.shape[0], -1)
    if xs.shape[1] != k:
        raise ShapeError(f"qlinear expects {k} features, got {xs.shape[1]}")
    acc = _add_bias(xs @ _weight_matrix(w, dtype), bias, k)
    return QuantTensor(_requantize_rows(acc, rq, relu), PerTensor(rq.output))


def qrelu(x: QuantTensor, out: QuantParams | None = None) -> QuantTensor:
    """Quantized ReLU: ``z_y`` below the input zero point, rescaled otherwise."""
    p = x.params
    out = p if out is None else out
    if out == p:
        return QuantTensor(np.maximum(x.data, np.int8(p.zero_point)), PerTensor(out))
    xq = x.data.astype(np.int32)
    pos = np.clip(np.rint(out.zero_point + (p.scale / out.scale) * (xq - p.zero_point)), out.qmin, out.qmax)
    y = np.where(xq < p.zero_point, out.zero_point, pos)
    return QuantTensor(y.astype(np.int8), PerTensor(out))


def _rescale(x: QuantTensor, out: QuantParams) -> np.ndarray:
    p = x.params
    r = x.data.astype(np.float64)
    r -= p.zero_point
    r *= p.scale / out.scale
    return r


def qadd(a: QuantTensor, b: QuantTensor, out: QuantParams) -> QuantTensor:
    """``clip(round(z_y + (s_a/s_y)(a_q - z_a) + (s_b/s_y)(b_q - z_b)))``."""
    if a.shape != b.shape:
        raise ShapeError(f"qadd operands differ: {a.shape} vs {b.shape}")
    y = out.zero_point + _rescale(a, out)
    y += _rescale(b, out)
    np.rint(y, out=y)
    np.clip(y, out.qmin, out.qmax, out=y)
    return QuantTensor(y.astype(np.int8), PerTensor(out))


def qconcat(xs: list[QuantTensor], out: QuantParams) -> QuantTensor:
    """Channel concatenation, each operand requantized onto ``out``."""
    parts = [np.clip(np.rint(out.zero_point + _rescale(x, out)), out.qmin, out.qmax) for x in xs]
    return QuantTensor(np.concatenate(parts, axis=1).astype(np.int8), PerTensor(out))
