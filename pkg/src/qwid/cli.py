"""``qwid`` command line: train, qat, convert, eval, bench, inspect."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import data, graph, model_io, models, qat
from .errors import ArgumentError, QwidError
from .evaluate import append_jsonl, bench, evaluate, write_jsonl


def _add_data_flags(p):
    p.add_argument("--data", default="synthetic", help="'synthetic' or a directory of <class>/*.ppm")
    p.add_argument("--per-class", type=int, default=100, help="synthetic images per weed class")
    p.add_argument("--seed", type=int, default=0)


def _add_train_flags(p):
    _add_data_flags(p)
    p.add_argument("--arch", choices=sorted(models.ARCHITECTURES), default="tinyresnet")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--history", help="history JSONL path (default: <out>.history.jsonl)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qwid", description="int8 quantization toolkit for small CNN classifiers")
    parser.add_argument("-q", "--quiet", action="store_true", help="only print results")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train an fp32 model")
    _add_train_flags(p)
    p.add_argument("--out", default="fp32.qwid")

    p = sub.add_parser("qat", help="quantization-aware training to a fake-quant checkpoint")
    _add_train_flags(p)
    p.add_argument("--init-from", help="fp32 model to initialize from")
    p.add_argument("--out", default="qat.qwid")

    p = sub.add_parser("convert", help="lower a fake-quant checkpoint to an int8 model")
    p.add_argument("--model", required=True)
    p.add_argument("--out", default="int8.qwid")

    p = sub.add_parser("eval", help="top-1/top-3 accuracy and confusion matrix on the test split")
    p.add_argument("--model", required=True)
    _add_data_flags(p)
    p.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    p.add_argument("--out", help="eval JSONL path (default: <model>.eval.jsonl)")

    p = sub.add_parser("bench", help="batch-1 latency, throughput, size and footprint")
    p.add_argument("--model", required=True)
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--warmup", type=int, default=10)
    p.add_argument("--hardware", default="unspecified", help="free-text hardware description")
    p.add_argument("--seed", type=int, default=0, help="seed of the fixed input tensor")
    p.add_argument("--out", help="append the report as one JSON line to this file")

    p = sub.add_parser("inspect", help="per-layer ops, footprint and model size")
    p.add_argument("--model", required=True)
    p.add_argument("--out", help="per-layer JSONL path")
    return parser


def _dataset(args) -> data.Dataset:
    if args.data == "synthetic":
        if args.per_class < 1:
            raise ArgumentError("--per-class must be >= 1")
        return data.generate_synthetic(args.seed, args.per_class)
    return data.load_image_dir(args.data)


def _config(args) -> qat.QatConfig:
    return qat.QatConfig(lr=args.lr, epochs=args.epochs, batch_size=args.batch, seed=args.seed)


def _fit(g, args):
    cfg = _config(args)
    splits = data.split(_dataset(args), args.seed)
    result = qat.train(g, splits, cfg)
    n = model_io.save(g, args.out)
    hist = args.history or f"{args.out}.history.jsonl"
    qat.write_history(result.history, hist)
    last = result.history[-1]
    print(f"wrote {args.out} ({n} bytes, mode {g.mode}); val_acc {last['val_acc']:.4f}; history {hist}")


def cmd_train(args):
    _fit(models.build(args.arch, seed=args.seed), args)


def cmd_qat(args):
    if args.init_from:
        base = model_io.load(args.init_from)
        if base.mode != graph.FP32:
            raise ArgumentError(f"--init-from needs an fp32 model, got mode {base.mode}")
    else:
        base = models.build(args.arch, seed=args.seed)
    _fit(graph.prepare_qat(base), args)


def cmd_convert(args):
    g = model_io.load(args.model)
    g8 = graph.convert(g)
    n = model_io.save(g8, args.out)
    print(f"wrote {args.out} ({n} bytes, mode {g8.mode})")


def cmd_eval(args):
    g = model_io.load(args.model)
    ds = _dataset(args)
    if args.split != "all":
        ds = getattr(data.split(ds, args.seed), args.split)
    report = evaluate(g, ds)
    out = args.out or f"{args.model}.eval.jsonl"
    write_jsonl(report.records(args.model), out)
    print(report.table())
    print(f"wrote {out}")


def cmd_bench(args):
    g = model_io.load(args.model)
    report = bench(
        g, model=args.model, size_bytes=model_io.model_size_bytes(args.model),
        iters=args.iters, warmup=args.warmup, hardware=args.hardware, seed=args.seed,
    )
    print(report.table())
    if args.out:
        append_jsonl(report.record(), args.out)


def cmd_inspect(args):
    g = model_io.load(args.model)
    shapes = graph.infer_shapes(g)
    ops = graph.node_ops(g, shapes)
    feet = graph.node_footprints(g)
    rows = []
    print(f"{'id':>3s}  {'kind':<20s} {'output':<18s} {'ops':>12s} {'bytes':>10s}")
    for n in g.nodes:
        shape = "x".join(str(d) for d in shapes[n.id])
        rows.append({"id": n.id, "kind": n.kind, "shape": list(shapes[n.id]), "ops": ops[n.id], "bytes": feet.get(n.id, 0)})
        print(f"{n.id:>3d}  {n.kind:<20s} {shape:<18s} {ops[n.id]:>12,d} {feet.get(n.id, 0):>10,d}")
    total = graph.count_ops(g)
    unit = "GOPs" if g.mode == graph.INT8 else "GFLOPs"
    print(f"mode {g.mode}; ops {total:,} ({total / 1e9:.6f} {unit}); parameters {graph.num_parameters(g):,}")
    print(f"memory footprint {graph.memory_footprint(g):,} bytes; file size {model_io.model_size_bytes(args.model):,} bytes")
    if args.out:
        write_jsonl(rows, args.out)


COMMANDS = {
    "train": cmd_train,
    "qat": cmd_qat,
    "convert": cmd_convert,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "inspect": cmd_inspect,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        for flag in ("epochs", "batch", "iters"):
            if getattr(args, flag, 1) < 1:
                raise ArgumentError(f"--{flag} must be >= 1")
        if getattr(args, "warmup", 0) < 0:
            raise ArgumentError("--warmup must be >= 0")
        for flag in ("model", "init_from"):
            path = getattr(args, flag, None)
            if path and not Path(path).is_file():
                raise ArgumentError(f"{path}: no such model file")
        COMMANDS[args.command](args)
    except (QwidError, OSError, ValueError) as e:
        print(f"qwid {args.command}: error: {str(e).splitlines()[0] if str(e) else type(e).__name__}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
