"""Running min/max observers that turn activation statistics into QuantParams."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyObserverError, ShapeError
from .quant import INT8_QMAX, INT8_QMIN, QuantParams, compute_qparams


@dataclass
class MinMaxObserver:
    """Global running envelope of everything observed so far.

    ``axis=None`` tracks one (lo, hi) pair; an integer axis tracks one pair per
    slice along that axis.
    """

    axis: int | None = None
    lo: np.ndarray | float | None = None
    hi: np.ndarray | float | None = None
    count: int = 0

    def observe(self, t: np.ndarray) -> "MinMaxObserver":
        t = np.asarray(t)
        if self.axis is None:
            lo, hi = float(t.min()), float(t.max())
        else:
            if t.ndim <= self.axis:
                raise ShapeError(f"tensor of rank {t.ndim} has no axis {self.axis}")
            slices = np.moveaxis(t, self.axis, 0).reshape(t.shape[self.axis], -1)
            lo, hi = slices.min(axis=1).astype(np.float64), slices.max(axis=1).astype(np.float64)
            if self.count and len(lo) != len(self.lo):
                raise ShapeError(
                    f"observer tracks {len(self.lo)} channels, tensor has {len(lo)}"
                )
        if self.count == 0:
            self.lo, self.hi = lo, hi
        else:
            self.lo = np.minimum(self.lo, lo) if self.axis is not None else min(self.lo, lo)
            self.hi = np.maximum(self.hi, hi) if self.axis is not None else max(self.hi, hi)
        self.count += 1
        return self

    def finalize(
        self, qmin: int = INT8_QMIN, qmax: int = INT8_QMAX, symmetric: bool = False
    ) -> QuantParams | list[QuantParams]:
        if self.count == 0:
            raise EmptyObserverError("observer has not seen any data")
        if self.axis is None:
            return compute_qparams((self.lo, self.hi), qmin, qmax, symmetric)
        return [
            compute_qparams((float(lo), float(hi)), qmin, qmax, symmetric)
            for lo, hi in zip(self.lo, self.hi)
        ]
