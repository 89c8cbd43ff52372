"""Tensor containers.

Float tensors are plain ``np.float32`` arrays; accumulators are ``np.int32``
arrays. Only the quantized tensor needs a dedicated container because it
carries its quantization scheme.

Layouts: activations ``(batch, channels, height, width)``, convolution
weights ``(c_out, c_in, f_h, f_w)``, fully-connected weights ``(c_out, c_in)``.
The output-channel axis of a weight is therefore always axis 0.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import ShapeError
from .quant import INT8_QMAX, INT8_QMIN, QuantParams, _affine_quantize, compute_qparams

WEIGHT_CHANNEL_AXIS = 0


@dataclass(frozen=True)
class PerTensor:
    params: QuantParams


@dataclass(frozen=True)
class PerChannel:
    axis: int
    params: tuple[QuantParams, ...]

    def scales(self) -> np.ndarray:
        return np.array([p.scale for p in self.params], dtype=np.float64)

    def zero_points(self) -> np.ndarray:
        return np.array([p.zero_point for p in self.params], dtype=np.int32)


QScheme = Union[PerTensor, PerChannel]


@dataclass(frozen=True)
class QuantTensor:
    data: np.ndarray  # int8
    qscheme: QScheme

    def __post_init__(self):
        data = np.ascontiguousarray(self.data)
        if data.dtype != np.int8:
            data = data.astype(np.int8)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        if isinstance(self.qscheme, PerChannel):
            ax = self.qscheme.axis
            if not 0 <= ax < data.ndim:
                raise ShapeError(f"per-channel axis {ax} invalid for shape {data.shape}")
            if len(self.qscheme.params) != data.shape[ax]:
                raise ShapeError(
                    f"{len(self.qscheme.params)} channel params for axis of length {data.shape[ax]}"
                )

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def params(self) -> QuantParams:
        """Per-tensor params; raises for per-channel tensors."""
        if not isinstance(self.qscheme, PerTensor):
            raise TypeError("per-channel tensor has no single QuantParams")
        return self.qscheme.params

    @property
    def per_channel(self) -> bool:
        return isinstance(self.qscheme, PerChannel)

    def _broadcast(self, values: np.ndarray) -> np.ndarray:
        shape = [1] * self.data.ndim
        shape[self.qscheme.axis] = -1
        return values.reshape(shape)

    def scale_array(self):
        if self.per_channel:
            return self._broadcast(self.qscheme.scales())
        return self.qscheme.params.scale

    def zero_point_array(self):
        if self.per_channel:
            return self._broadcast(self.qscheme.zero_points())
        return self.qscheme.params.zero_point


def _check_nonempty(t: np.ndarray):
    if t.size == 0 or any(d < 1 for d in t.shape):
        raise ShapeError(f"empty tensor of shape {t.shape}")


def per_channel_params(
    w: np.ndarray, axis: int = WEIGHT_CHANNEL_AXIS, symmetric: bool = True,
    qmin: int = INT8_QMIN, qmax: int = INT8_QMAX,
) -> PerChannel:
    _check_nonempty(w)
    moved = np.moveaxis(np.asarray(w, dtype=np.float64), axis, 0).reshape(w.shape[axis], -1)
    params = tuple(
        compute_qparams((float(row.min()), float(row.max())), qmin, qmax, symmetric)
        for row in moved
    )
    return PerChannel(axis, params)


def quantize_tensor(
    t: np.ndarray,
    per_channel: bool = False,
    symmetric: bool | None = None,
    params: QuantParams | None = None,
) -> QuantTensor:
    """Quantize a float tensor to int8.

    Per-tensor mode derives one QuantParams from the global min/max (or uses
    ``params`` when given). Per-channel mode is for weights only and derives
    one symmetric QuantParams per output-channel slice. ``symmetric`` defaults
    to ``per_channel``.
    """
    t = np.asarray(t)
    _check_nonempty(t)
    if symmetric is None:
        symmetric = per_channel
    if per_channel:
        if t.ndim not in (2, 4):
            raise ShapeError(f"per-channel quantization needs a weight tensor, got shape {t.shape}")
        scheme: QScheme = per_channel_params(t, WEIGHT_CHANNEL_AXIS, symmetric)
        qt = QuantTensor(np.zeros(t.shape, np.int8), scheme)
        q = _affine_quantize(t, qt.scale_array(), qt.zero_point_array(), INT8_QMIN, INT8_QMAX)
        return QuantTensor(q.astype(np.int8), scheme)
    if params is None:
        params = compute_qparams((float(t.min()), float(t.max())), symmetric=symmetric)
    q = _affine_quantize(t, params.scale, params.zero_point, params.qmin, params.qmax)
    return QuantTensor(q.astype(np.int8), PerTensor(params))


def dequantize_tensor(t: QuantTensor, dtype=np.float32) -> np.ndarray:
    real = (t.data.astype(np.float64) - t.zero_point_array()) * t.scale_array()
    return real.astype(dtype)
