"""Affine quantization math.

The map between reals and the integer grid is ``q = clip(round(x / s + z))``
and ``x = s * (q - z)``. Rounding is half-to-even everywhere (``np.rint``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, QuantInputError, QuantRangeError

INT8_QMIN = -128
INT8_QMAX = 127


@dataclass(frozen=True)
class RealRange:
    lo: float
    hi: float

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
            raise QuantRangeError(f"non-finite range [{self.lo}, {self.hi}]")
        if self.lo > self.hi:
            raise QuantRangeError(f"empty range: lo={self.lo} > hi={self.hi}")


@dataclass(frozen=True)
class QuantParams:
    """Scale, zero point and the integer interval they map into."""

    scale: float
    zero_point: int
    qmin: int = INT8_QMIN
    qmax: int = INT8_QMAX

    def __post_init__(self):
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise QuantRangeError(f"scale must be positive and finite, got {self.scale}")
        if self.qmin >= self.qmax:
            raise QuantRangeError(f"qmin={self.qmin} must be below qmax={self.qmax}")
        if not self.qmin <= self.zero_point <= self.qmax:
            raise QuantRangeError(
                f"zero point {self.zero_point} outside [{self.qmin}, {self.qmax}]"
            )
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "zero_point", int(self.zero_point))

    @property
    def real_min(self) -> float:
        return self.scale * (self.qmin - self.zero_point)

    @property
    def real_max(self) -> float:
        return self.scale * (self.qmax - self.zero_point)


def compute_qparams(
    rng: RealRange | tuple[float, float],
    qmin: int = INT8_QMIN,
    qmax: int = INT8_QMAX,
    symmetric: bool = False,
) -> QuantParams:
    """Derive scale and zero point for a real range.

    Asymmetric mode widens the range minimally so that 0 lies inside it, then
    spreads it over the whole ``[qmin, qmax]`` grid. Symmetric mode pins the
    zero point to 0 and uses ``scale = max(|lo|, |hi|) / qmax`` so that the
    grid is symmetric about zero (``qmin`` is never produced for in-range
    values). A degenerate range ``lo == hi == c`` (after symmetric widening,
    so only ``c == 0`` there) gets ``scale = max(|c|, 1) / qmax`` with zero
    point 0.
    """
    if qmin >= qmax:
        raise QuantRangeError(f"qmin={qmin} must be below qmax={qmax}")
    if not isinstance(rng, RealRange):
        rng = RealRange(float(rng[0]), float(rng[1]))
    lo, hi = rng.lo, rng.hi

    tiny = np.finfo(np.float64).tiny
    if symmetric:
        m = max(abs(lo), abs(hi))
        if m / qmax >= tiny:
            return QuantParams(m / qmax, 0, qmin, qmax)
    elif lo != hi:
        lo, hi = min(lo, 0.0), max(hi, 0.0)
        scale = (hi - lo) / (qmax - qmin)
        if scale >= tiny:
            zero_point = int(np.clip(np.rint(qmin - lo / scale), qmin, qmax))
            return QuantParams(scale, zero_point, qmin, qmax)
    # degenerate: a constant range, or one too narrow for a normal float scale
    c = hi if abs(hi) >= abs(lo) else lo
    return QuantParams(max(abs(c), 1.0) / qmax, int(np.clip(0, qmin, qmax)), qmin, qmax)


def clip(x, lo, hi):
    """Saturate ``x`` into ``[lo, hi]``. Works on scalars and arrays."""
    if lo > hi:
        raise ArgumentError(f"clip bounds inverted: lo={lo} > hi={hi}")
    if np.ndim(x) == 0:
        return lo if x < lo else hi if x > hi else x
    return np.clip(x, lo, hi)


def _affine_quantize(x, scale, zero_point, qmin, qmax):
    # scale/zero_point may be arrays broadcastable against x (per-channel)
    with np.errstate(over="ignore"):  # huge x/scale saturates in the clip
        q = np.rint(np.asarray(x) / scale + zero_point)
    return np.clip(q, qmin, qmax)


def quantize(x, p: QuantParams):
    """Map real value(s) onto the integer grid of ``p``.

    Scalars give a Python ``int``; arrays give an ``int32`` array (callers
    narrow to ``int8`` storage when the grid is int8).
    """
    if not np.all(np.isfinite(x)):
        raise QuantInputError("cannot quantize non-finite values")
    q = _affine_quantize(x, p.scale, p.zero_point, p.qmin, p.qmax)
    if np.ndim(q) == 0:
        return int(q)
    return q.astype(np.int32)


def dequantize(x_q, p: QuantParams):
    if np.ndim(x_q) == 0:
        return p.scale * (int(x_q) - p.zero_point)
    return p.scale * (np.asarray(x_q, dtype=np.float64) - p.zero_point)


def fake_quantize(x, p: QuantParams):
    """Quantize then dequantize, keeping the input's float dtype for arrays."""
    if np.ndim(x) == 0:
        return dequantize(quantize(x, p), p)
    x = np.asarray(x)
    if not np.all(np.isfinite(x)):
        raise QuantInputError("cannot quantize non-finite values")
    q = _affine_quantize(x, p.scale, p.zero_point, p.qmin, p.qmax)
    return ((q - p.zero_point) * p.scale).astype(x.dtype, copy=False)
