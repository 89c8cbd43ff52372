"""Shared builders for the test modules."""
import numpy as np

from qwid import graph as G
from qwid.rng import SplitMix64


def rng_images(n, shape=(3, 32, 32), seed=0, lo=0.0, hi=1.0):
    return SplitMix64(seed).uniform((n, *shape), lo, hi).astype(np.float32)


def random_bn(g, seed=0):
    """Give every batch norm non-trivial running statistics."""
    rng = np.random.default_rng(seed)
    for n in g.nodes:
        if n.bn is not None:
            c = len(n.bn.gamma)
            n.bn.gamma = rng.uniform(0.5, 1.5, c).astype(np.float32)
            n.bn.beta = rng.normal(0, 0.1, c).astype(np.float32)
            n.bn.mean = rng.normal(0, 0.1, c).astype(np.float32)
            n.bn.var = rng.uniform(0.5, 2.0, c).astype(np.float32)
    return g


def calibrated_int8(g, fq=None, x=None):
    """Fold, fuse, calibrate observers on ``x`` and convert to int8."""
    fq = G.prepare_qat(g) if fq is None else fq
    x = rng_images(16, tuple(g.input_shape), seed=42) if x is None else x
    G.forward(fq, x, calibrate=True)
    return G.convert(fq)
