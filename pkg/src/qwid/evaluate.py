"""Accuracy reports and the latency benchmark."""
from __future__ import annotations

import json
import statistics
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .data import Dataset
from .errors import ArgumentError
from .graph import INT8, LayerGraph, count_ops, forward, int8_program, memory_footprint
from .qat import predict
from .rng import SplitMix64


@dataclass
class EvalReport:
    top1: float
    top3: float
    confusion: np.ndarray  # rows = actual class, columns = predicted
    class_names: tuple[str, ...]

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    def records(self, model: str = "") -> list[dict]:
        """Line-delimited form: one summary record, then one record per actual class."""
        out = [{"record": "summary", "model": model, "top1": self.top1, "top3": self.top3, "total": self.total}]
        for i, name in enumerate(self.class_names):
            out.append({"record": "row", "actual": name, "counts": self.confusion[i].tolist()})
        return out

    def table(self) -> str:
        width = max(len(n) for n in self.class_names)
        head = " " * width + " | " + " ".join(f"{i:>5d}" for i in range(len(self.class_names)))
        lines = [f"top-1 {self.top1:.4f}  top-3 {self.top3:.4f}  ({self.total} images)", head]
        for i, name in enumerate(self.class_names):
            lines.append(f"{name:>{width}s} | " + " ".join(f"{v:>5d}" for v in self.confusion[i]))
        lines.append("rows: actual class, columns: predicted class index")
        return "\n".join(lines)


def topk_hits(logits: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    k = min(k, logits.shape[1])
    # stable ordering: ties go to the lower class index
    top = np.argsort(-logits, axis=1, kind="stable")[:, :k]
    return (top == labels[:, None]).any(axis=1)


def confusion_matrix(actual: np.ndarray, predicted: np.ndarray, num_classes: int) -> np.ndarray:
    m = np.zeros((num_classes, num_classes), np.int64)
    np.add.at(m, (actual, predicted), 1)
    return m


def evaluate(g: LayerGraph, ds: Dataset, batch_size: int = 256) -> EvalReport:
    if len(ds) == 0:
        raise ArgumentError("cannot evaluate on an empty dataset")
    logits = predict(g, ds.images, batch_size)
    c = len(ds.class_names)
    if logits.shape[1] != c:
        raise ArgumentError(f"model has {logits.shape[1]} outputs but the dataset has {c} classes")
    pred = logits.argmax(axis=1)
    return EvalReport(
        top1=float(topk_hits(logits, ds.labels, 1).mean()),
        top3=float(topk_hits(logits, ds.labels, 3).mean()),
        confusion=confusion_matrix(ds.labels, pred, c),
        class_names=tuple(ds.class_names),
    )


@dataclass
class BenchReport:
    model: str
    hardware: str
    iterations: int
    mean_ms: float
    median_ms: float
    min_ms: float
    ops: int
    throughput_gops: float
    size_bytes: int
    footprint_bytes: int
    batch: int = 1
    samples_ms: list = field(default_factory=list, repr=False)

    def record(self) -> dict:
        d = asdict(self)
        d.pop("samples_ms")
        return d

    def table(self) -> str:
        return "\n".join(
            [
                f"model       {self.model}",
                f"hardware    {self.hardware}",
                f"iterations  {self.iterations} (batch {self.batch})",
                f"latency ms  mean {self.mean_ms:.4f}  median {self.median_ms:.4f}  min {self.min_ms:.4f}",
                f"ops         {self.ops:,}",
                f"throughput  {self.throughput_gops:.4f} GOPs/s",
                f"size        {self.size_bytes:,} bytes",
                f"footprint   {self.footprint_bytes:,} bytes",
            ]
        )


def time_forward(g: LayerGraph, x: np.ndarray, iters: int = 100, warmup: int = 10) -> list[float]:
    """Latencies in ms of ``iters`` forward passes on ``x`` after ``warmup``
    untimed passes, single-threaded. Only the forward call is timed."""
    if iters < 1 or warmup < 0:
        raise ArgumentError("iterations must be >= 1 and warmup >= 0")
    run = int8_program(g).run if g.mode == INT8 else (lambda t: forward(g, t))
    samples = []
    with threadpool_limits(limits=1):
        for _ in range(warmup):
            run(x)
        for _ in range(iters):
            t0 = time.perf_counter_ns()
            run(x)
            samples.append((time.perf_counter_ns() - t0) / 1e6)
    return samples


def bench(
    g: LayerGraph, model: str = "", size_bytes: int = 0, iters: int = 100, warmup: int = 10,
    hardware: str = "unspecified", seed: int = 0,
) -> BenchReport:
    """Benchmark at batch 1 on a fixed input prepared before timing starts."""
    x = SplitMix64(seed).uniform((1, *g.input_shape)).astype(np.float32)
    samples = time_forward(g, x, iters, warmup)
    ops = count_ops(g)
    mean = statistics.fmean(samples)
    return BenchReport(
        model=model,
        hardware=hardware,
        iterations=len(samples),
        mean_ms=mean,
        median_ms=statistics.median(samples),
        min_ms=min(samples),
        ops=ops,
        throughput_gops=ops / (mean * 1e-3) / 1e9,
        size_bytes=size_bytes,
        footprint_bytes=memory_footprint(g),
        samples_ms=samples,
    )


def write_jsonl(records, path):
    with open(path, "w") as f:
        for r in records:
            f.write(json.dumps(r, sort_keys=True) + "\n")


def append_jsonl(record: dict, path):
    with open(path, "a") as f:
        f.write(json.dumps(record, sort_keys=True) + "\n")
