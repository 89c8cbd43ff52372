import json

import numpy as np
import pytest

from qwid import graph as G
from qwid import model_io as io
from qwid.cli import build_parser, main
from qwid.data import generate_synthetic, split
from qwid.graph import GraphBuilder

SMALL = ["--per-class", "5", "--seed", "1"]


def _lines(path):
    return [json.loads(line) for line in open(path)]


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """train -> qat --init-from -> convert on a tiny synthetic set."""
    d = tmp_path_factory.mktemp("pipe")
    assert main(["-q", "train", *SMALL, "--epochs", "2", "--lr", "1e-3", "--out", str(d / "fp32.qwid")]) == 0
    assert main(["-q", "qat", *SMALL, "--epochs", "1", "--init-from", str(d / "fp32.qwid"),
                 "--out", str(d / "qat.qwid")]) == 0
    assert main(["-q", "convert", "--model", str(d / "qat.qwid"), "--out", str(d / "int8.qwid")]) == 0
    return d


def test_defaults():
    args = build_parser().parse_args(["train"])
    assert (args.epochs, args.lr, args.batch, args.arch, args.data) == (30, 1e-4, 32, "tinyresnet", "synthetic")
    b = build_parser().parse_args(["bench", "--model", "m"])
    assert (b.iters, b.warmup) == (100, 10)


class TestTrain:
    def test_one_epoch_one_line(self, tmp_path, capsys):
        out = tmp_path / "m.qwid"
        assert main(["-q", "train", *SMALL, "--epochs", "1", "--out", str(out)]) == 0
        hist = _lines(f"{out}.history.jsonl")
        assert len(hist) == 1 and set(hist[0]) == {"epoch", "train_acc", "val_acc", "loss"}
        assert io.to_bytes(io.load(out))[6] == 0
        assert "wrote" in capsys.readouterr().out

    def test_history_flag_and_arch(self, tmp_path):
        h = tmp_path / "h.jsonl"
        assert main(["-q", "train", *SMALL, "--epochs", "1", "--arch", "tinyinception", "--history", str(h),
                     "--out", str(tmp_path / "i.qwid")]) == 0
        assert len(_lines(h)) == 1
        assert any(n.kind == "concat" for n in io.load(tmp_path / "i.qwid").nodes)

    def test_same_seed_identical_files(self, tmp_path):
        for name in ("a", "b"):
            assert main(["-q", "train", *SMALL, "--epochs", "2", "--out", str(tmp_path / f"{name}.qwid")]) == 0
        assert (tmp_path / "a.qwid").read_bytes() == (tmp_path / "b.qwid").read_bytes()
        assert (tmp_path / "a.qwid.history.jsonl").read_text() == (tmp_path / "b.qwid.history.jsonl").read_text()

    def test_image_directory(self, tmp_path):
        from qwid.data import save_image_dir

        save_image_dir(generate_synthetic(0, 5), tmp_path / "imgs")
        assert main(["-q", "train", "--data", str(tmp_path / "imgs"), "--epochs", "1",
                     "--out", str(tmp_path / "d.qwid")]) == 0


class TestErrors:
    def _fails(self, argv, capsys):
        code = main(argv)
        err = capsys.readouterr().err.strip()
        assert code != 0 and len(err.splitlines()) == 1 and "error" in err
        return err

    def test_missing_init_file(self, tmp_path, capsys):
        self._fails(["qat", *SMALL, "--init-from", str(tmp_path / "none.qwid"), "--out", str(tmp_path / "q")], capsys)

    def test_convert_fp32_model(self, pipeline, tmp_path, capsys):
        self._fails(["convert", "--model", str(pipeline / "fp32.qwid"), "--out", str(tmp_path / "x")], capsys)

    def test_init_from_non_fp32(self, pipeline, tmp_path, capsys):
        self._fails(["qat", *SMALL, "--init-from", str(pipeline / "int8.qwid"), "--out", str(tmp_path / "q")], capsys)

    @pytest.mark.parametrize("flags", [["--epochs", "0"], ["--batch", "0"], ["--per-class", "0"], ["--lr", "-1"]])
    def test_bad_flags(self, tmp_path, capsys, flags):
        self._fails(["train", *SMALL, *flags, "--out", str(tmp_path / "m")], capsys)

    def test_corrupt_model(self, tmp_path, capsys):
        (tmp_path / "bad.qwid").write_bytes(b"NOPE")
        self._fails(["inspect", "--model", str(tmp_path / "bad.qwid")], capsys)

    def test_unknown_command(self):
        with pytest.raises(SystemExit) as e:
            main(["fly"])
        assert e.value.code != 0


class TestConvert:
    def test_mode_byte_and_ratio(self, pipeline):
        assert (pipeline / "int8.qwid").read_bytes()[6] == 1
        assert (pipeline / "qat.qwid").read_bytes()[6] == 2
        ratio = io.model_size_bytes(pipeline / "int8.qwid") / io.model_size_bytes(pipeline / "fp32.qwid")
        assert ratio <= 0.30


class TestEval:
    @pytest.mark.parametrize("model", ["fp32.qwid", "int8.qwid"])
    def test_report(self, pipeline, tmp_path, model, capsys):
        out = tmp_path / "e.jsonl"
        assert main(["eval", "--model", str(pipeline / model), *SMALL, "--out", str(out)]) == 0
        recs = _lines(out)
        summary, rows = recs[0], recs[1:]
        test = split(generate_synthetic(1, 5), 1).test
        assert summary["total"] == len(test) and summary["top3"] >= summary["top1"]
        assert len(rows) == 9
        np.testing.assert_array_equal([sum(r["counts"]) for r in rows], test.class_counts())
        assert "top-1" in capsys.readouterr().out

    def test_default_out_path(self, pipeline):
        assert main(["-q", "eval", "--model", str(pipeline / "int8.qwid"), *SMALL, "--split", "all"]) == 0
        assert _lines(pipeline / "int8.qwid.eval.jsonl")[0]["total"] == 80

    def test_reproducible(self, pipeline, tmp_path):
        for name in ("a", "b"):
            main(["-q", "eval", "--model", str(pipeline / "int8.qwid"), *SMALL, "--out", str(tmp_path / name)])
        assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


class TestBenchInspect:
    def test_bench(self, pipeline, tmp_path, capsys):
        out = tmp_path / "b.jsonl"
        for _ in range(2):
            assert main(["bench", "--model", str(pipeline / "int8.qwid"), "--iters", "5", "--warmup", "1",
                         "--hardware", "test box", "--out", str(out)]) == 0
        recs = _lines(out)
        assert len(recs) == 2
        r = recs[0]
        assert r["iterations"] == 5 and r["hardware"] == "test box" and r["batch"] == 1
        assert r["size_bytes"] == io.model_size_bytes(pipeline / "int8.qwid")
        assert r["throughput_gops"] == pytest.approx(r["ops"] / (r["mean_ms"] / 1e3) / 1e9)
        assert "GOPs/s" in capsys.readouterr().out

    def test_inspect_conv_example(self, tmp_path, capsys):
        b = GraphBuilder((1, 8, 8))
        b.conv(b.input(), np.ones((1, 1, 3, 3)), padding=1)
        io.save(b.build(), tmp_path / "c.qwid")
        assert main(["inspect", "--model", str(tmp_path / "c.qwid"), "--out", str(tmp_path / "c.jsonl")]) == 0
        text = capsys.readouterr().out
        assert "ops 1,152" in text
        assert [r["ops"] for r in _lines(tmp_path / "c.jsonl")] == [0, 1152]

    def test_inspect_footprint_quarter(self, pipeline, capsys):
        def footprint(name):
            main(["inspect", "--model", str(pipeline / name)])
            line = [ln for ln in capsys.readouterr().out.splitlines() if ln.startswith("memory footprint")][0]
            return int(line.split()[2].replace(",", ""))

        fused = G.fuse(G.fold_bn(io.load(pipeline / "fp32.qwid")))
        assert footprint("int8.qwid") * 4 == G.memory_footprint(fused)
        assert footprint("fp32.qwid") >= G.memory_footprint(fused)


def test_init_from_converges_faster(tmp_path):
    # both QAT runs share seed, data and budget; only the starting point differs
    common = ["--per-class", "20", "--seed", "4"]
    assert main(["-q", "train", *common, "--epochs", "10", "--lr", "3e-3", "--out", str(tmp_path / "base.qwid")]) == 0
    qat = [*common, "--epochs", "8", "--lr", "1e-3"]
    assert main(["-q", "qat", *qat, "--init-from", str(tmp_path / "base.qwid"), "--out", str(tmp_path / "w.qwid")]) == 0
    assert main(["-q", "qat", *qat, "--out", str(tmp_path / "c.qwid")]) == 0

    def first_epoch_at_90(name):
        hist = _lines(tmp_path / f"{name}.qwid.history.jsonl")
        return next((h["epoch"] for h in hist if h["val_acc"] >= 0.9), float("inf"))

    warm, cold = first_epoch_at_90("w"), first_epoch_at_90("c")
    assert warm < cold
    # the cold start still learns
    hist = _lines(tmp_path / "c.qwid.history.jsonl")
    assert hist[-1]["val_acc"] > hist[0]["val_acc"]
