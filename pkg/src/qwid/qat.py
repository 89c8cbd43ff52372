"""Quantization-aware training: reverse-mode gradients, loss, Adam, training loop.

All arithmetic is floating point. Fake-quant nodes use a clipped
straight-through estimator: the gradient passes unchanged where the value
lands on the integer grid without saturating and is zero where it clips.
Weight fake-quantization is per-channel symmetric, which never saturates, so
weight gradients pass straight through.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels as K
from .data import Dataset, Splits
from .errors import ArgumentError, ContractError, DatasetError, GraphError
from .graph import CONV_KINDS, LayerGraph, forward
from .rng import SplitMix64

log = logging.getLogger(__name__)


# ------------------------------------------------------------------ loss


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient w.r.t. ``logits``.

    Accepts a single logit vector with an integer label, or a batch
    ``(N, C)`` with ``N`` labels.
    """
    logits = np.asarray(logits)
    single = logits.ndim == 1
    if single:
        logits, labels = logits[None], np.array([labels])
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if labels.shape != (n,) or labels.min() < 0 or labels.max() >= c:
        raise ArgumentError(f"labels must lie in [0, {c})")
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(logsum - z[np.arange(n), labels]))
    grad = softmax(logits)
    grad[np.arange(n), labels] -= 1
    grad /= n
    return loss, (grad[0] if single else grad)


# -------------------------------------------------------------- backward


def fake_quant_backward(g_y, x, p):
    """Clipped STE: pass ``g_y`` where ``round(x/s + z)`` stays inside [qmin, qmax]."""
    q = np.rint(np.asarray(x) / p.scale + p.zero_point)
    return np.where((q >= p.qmin) & (q <= p.qmax), g_y, 0)


def _bn_backward(gy, xhat, inv_std, gamma):
    m = gy.shape[0] * gy.shape[2] * gy.shape[3]
    dgamma = (gy * xhat).sum(axis=(0, 2, 3))
    dbeta = gy.sum(axis=(0, 2, 3))
    dxhat = gy * gamma.reshape(1, -1, 1, 1)
    s1 = dxhat.sum(axis=(0, 2, 3), keepdims=True)
    s2 = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
    dx = inv_std.reshape(1, -1, 1, 1) / m * (m * dxhat - s1 - xhat * s2)
    return dx.astype(gy.dtype, copy=False), dgamma, dbeta


def _conv_backward(gy, entry, spec):
    w = entry["w"]
    cout = w.shape[0]
    gmat = gy.transpose(0, 2, 3, 1).reshape(-1, cout)
    dw = (gmat.T @ entry["cols"]).reshape(w.shape)
    db = gmat.sum(axis=0)
    dcols = gmat @ w.reshape(cout, -1).astype(gy.dtype, copy=False)
    dx = K.col2im(dcols, entry["x_shape"], w.shape[2], w.shape[3], spec)
    return dx, dw, db


def _maxpool_backward(gy, x, window, stride):
    n, c, ho, wo = gy.shape
    win = K._pool_windows(x, window, stride)[:, :, :ho, :wo]
    arg = win.reshape(n, c, ho, wo, window * window).argmax(axis=-1)
    rows = np.arange(ho).reshape(1, 1, ho, 1) * stride + arg // window
    cols = np.arange(wo).reshape(1, 1, 1, wo) * stride + arg % window
    nn = np.arange(n).reshape(n, 1, 1, 1)
    cc = np.arange(c).reshape(1, c, 1, 1)
    dx = np.zeros_like(x)
    if stride >= window:
        dx[nn, cc, rows, cols] = gy
    else:
        np.add.at(dx, (nn, cc, rows, cols), gy)
    return dx


def backward(g: LayerGraph, cache: dict, grad_out: np.ndarray) -> dict:
    """Reverse-mode pass over a graph run with ``forward(..., cache=cache)``.

    Returns gradients keyed ``(node_id, name)`` for names ``weight``,
    ``bias``, ``bn.gamma``, ``bn.beta``; the gradient w.r.t. the graph input
    is stored under ``"input"``.
    """
    if not cache or "_out_shape" not in cache:
        raise GraphError("backward needs the activations recorded by forward(cache=...)")
    pending = {g.nodes[-1].id: np.asarray(grad_out).reshape(cache["_out_shape"])}
    grads: dict = {}

    def push(i, d):
        pending[i] = pending[i] + d if i in pending else d

    for node in reversed(g.nodes):
        gy = pending.pop(node.id, None)
        if gy is None:
            continue
        k, entry = node.kind, cache.get(node.id)
        if k == "input":
            grads["input"] = gy
        elif k in CONV_KINDS:
            if "mask" in entry:
                gy = gy * entry["mask"]
            if "bn" in entry:
                gy, dgamma, dbeta = _bn_backward(gy, *entry["bn"], node.bn.gamma)
                grads[(node.id, "bn.gamma")] = dgamma
                grads[(node.id, "bn.beta")] = dbeta
            dx, dw, db = _conv_backward(gy, entry, node.spec)
            grads[(node.id, "weight")] = dw
            grads[(node.id, "bias")] = db
            push(node.inputs[0], dx)
        elif k == "linear":
            x = entry["x"]
            x2 = x.reshape(x.shape[0], -1)
            grads[(node.id, "weight")] = gy.T @ x2
            grads[(node.id, "bias")] = gy.sum(axis=0)
            push(node.inputs[0], (gy @ entry["w"].astype(gy.dtype, copy=False)).reshape(x.shape))
        elif k in ("relu", "fake-quant"):
            push(node.inputs[0], gy * entry["mask"])
        elif k == "add":
            push(node.inputs[0], gy)
            push(node.inputs[1], gy)
        elif k == "concat":
            bounds = np.cumsum(entry["sizes"])[:-1]
            for i, part in zip(node.inputs, np.split(gy, bounds, axis=1)):
                push(i, part)
        elif k == "maxpool":
            push(node.inputs[0], _maxpool_backward(gy, entry["x"], node.window, node.stride))
        elif k == "gavgpool":
            n, c, h, w = entry["x_shape"]
            push(node.inputs[0], np.broadcast_to(gy / (h * w), (n, c, h, w)).astype(gy.dtype))
        elif k == "batchnorm":
            if "bn" not in entry:
                raise GraphError("batch-norm backward requires a training-mode forward")
            dx, dgamma, dbeta = _bn_backward(gy, *entry["bn"], node.bn.gamma)
            grads[(node.id, "bn.gamma")] = dgamma
            grads[(node.id, "bn.beta")] = dbeta
            push(node.inputs[0], dx)
        else:
            raise GraphError(f"no gradient rule for {k!r}")
    return grads


# ------------------------------------------------------------- optimizer


def parameters(g: LayerGraph) -> dict:
    """Trainable arrays keyed like :func:`backward` gradients (views, not copies)."""
    out = {}
    for n in g.nodes:
        if isinstance(n.weight, np.ndarray):
            out[(n.id, "weight")] = n.weight
            out[(n.id, "bias")] = n.bias
        if n.bn is not None:
            out[(n.id, "bn.gamma")] = n.bn.gamma
            out[(n.id, "bn.beta")] = n.bn.beta
    return out


@dataclass
class QatConfig:
    lr: float = 1e-4
    epochs: int = 30
    batch_size: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if not self.lr >= 0:
            raise ArgumentError("learning rate must be non-negative")
        if self.epochs < 1 or self.batch_size < 1:
            raise ArgumentError("epochs and batch size must be at least 1")


@dataclass
class TrainState:
    params: dict
    grads: dict = field(default_factory=dict)
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    epoch: int = 0
    seed: int = 0

    @classmethod
    def for_graph(cls, g: LayerGraph, seed: int = 0) -> "TrainState":
        params = parameters(g)
        return cls(
            params,
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            seed=seed,
        )


def adam_step(state: TrainState, cfg: QatConfig) -> TrainState:
    """One bias-corrected Adam update, applied to the parameter arrays in place."""
    state.step += 1
    t = state.step
    c1 = 1 - cfg.beta1**t
    c2 = 1 - cfg.beta2**t
    for key, p in state.params.items():
        g = state.grads.get(key)
        if g is None:
            continue
        m, v = state.m[key], state.v[key]
        m *= cfg.beta1
        m += (1 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1 - cfg.beta2) * g * g
        update = cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        p -= update.astype(p.dtype, copy=False)
    return state


# ---------------------------------------------------------------- training


def train_step(g: LayerGraph, state: TrainState, cfg: QatConfig, x, y) -> tuple[float, np.ndarray]:
    cache: dict = {}
    logits = forward(g, x, training=True, cache=cache)
    loss, dlogits = cross_entropy(logits, y)
    if not np.isfinite(loss):
        raise FloatingPointError(f"non-finite loss at step {state.step}")
    state.grads = backward(g, cache, dlogits.astype(logits.dtype))
    adam_step(state, cfg)
    return loss, logits


def predict(g: LayerGraph, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Inference logits for a stack of images."""
    outs = [forward(g, images[i : i + batch_size]) for i in range(0, len(images), batch_size)]
    return np.concatenate(outs) if outs else np.zeros((0, 0), np.float32)


def accuracy(g: LayerGraph, ds: Dataset) -> float:
    if len(ds) == 0:
        return float("nan")
    return float(np.mean(predict(g, ds.images).argmax(axis=1) == ds.labels))


@dataclass
class TrainResult:
    graph: LayerGraph
    history: list[dict]
    state: TrainState


def train(g: LayerGraph, splits: Splits, cfg: QatConfig, on_epoch=None) -> TrainResult:
    """Minibatch training with Adam; fake-quant graphs train with STE.

    The graph's parameters (and observers) are updated in place. One history
    record per epoch: ``epoch``, ``train_acc``, ``val_acc``, ``loss``.
    """
    if g.mode == "int8":
        raise ContractError("int8 graphs have no trainable parameters")
    if len(splits.train) == 0 or len(splits.val) == 0:
        raise DatasetError("training needs non-empty train and validation splits")
    state = TrainState.for_graph(g, cfg.seed)
    order_rng = SplitMix64(cfg.seed).spawn(0xBA7C)
    history = []
    x_all, y_all = splits.train.images, splits.train.labels
    for epoch in range(1, cfg.epochs + 1):
        perm = order_rng.permutation(len(y_all))
        losses, correct = [], 0
        for i in range(0, len(perm), cfg.batch_size):
            idx = perm[i : i + cfg.batch_size]
            loss, logits = train_step(g, state, cfg, x_all[idx], y_all[idx])
            losses.append(loss * len(idx))
            correct += int((logits.argmax(axis=1) == y_all[idx]).sum())
        state.epoch = epoch
        rec = {
            "epoch": epoch,
            "train_acc": correct / len(y_all),
            "val_acc": accuracy(g, splits.val),
            "loss": float(np.sum(losses) / len(y_all)),
        }
        history.append(rec)
        log.info("epoch %d loss %.4f train %.4f val %.4f", epoch, rec["loss"], rec["train_acc"], rec["val_acc"])
        if on_epoch is not None:
            on_epoch(rec)
    return TrainResult(g, history, state)


def write_history(history: list[dict], path):
    with open(path, "w") as f:
        for rec in history:
            f.write(json.dumps(rec, sort_keys=True) + "\n")
