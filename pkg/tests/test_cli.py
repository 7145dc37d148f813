"""Command-line behavior: artifact files written, figures rendered,
provenance embedded, exit codes, and determinism across re-runs."""

import json

import numpy as np
import pytest

from ila import data
from ila.cli import main

TINY_CFG = """\
frames = 4
height = 16
width = 16
patch = 8
dim = 16
blocks = 2
heads = 2
aligned_blocks = 1-2
train_samples = 32
test_samples = 16
steps = 8
warmup_steps = 2
batch_size = 16
speed = 2
"""


@pytest.fixture
def ws(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(TINY_CFG)
    return tmp_path


def gen(ws, split="train"):
    out = ws / f"{split}.ilav"
    rc = main(["gen", "--config", str(ws / "run.cfg"), "--out", str(out),
               "--split", split])
    assert rc == 0
    return out


class TestGen:
    def test_writes_dataset_and_montage(self, ws):
        out = gen(ws)
        labels, clips, meta = data.read_dataset(out)
        assert meta.n == 32 and meta.frames == 4
        png = out.with_suffix(".png")
        assert png.exists() and png.stat().st_size > 1000

    def test_deterministic_bytes(self, ws):
        a = gen(ws).read_bytes()
        (ws / "train.ilav").unlink()
        b = gen(ws).read_bytes()
        assert a == b

    def test_split_seeds_differ(self, ws):
        a = gen(ws, "train").read_bytes()
        b = gen(ws, "test").read_bytes()
        assert a != b

    def test_infeasible_spec_exits_nonzero(self, ws):
        bad = ws / "bad.cfg"
        bad.write_text(TINY_CFG.replace("speed = 2", "speed = 50"))
        rc = main(["gen", "--config", str(bad), "--out", str(ws / "x.ilav")])
        assert rc == 1


class TestTrainEval:
    def test_full_round_trip(self, ws):
        train_file = gen(ws, "train")
        test_file = gen(ws, "test")
        ckpt = ws / "out" / "model.ilac"
        rc = main(["train", "--config", str(ws / "run.cfg"),
                   "--data", str(train_file), "--out", str(ckpt)])
        assert rc == 0
        assert ckpt.exists()
        log = ckpt.with_suffix(".log.jsonl")
        lines = [json.loads(line) for line in log.read_text().splitlines()]
        assert lines[0]["dataset_hash"] == data.content_hash(train_file)
        assert lines[0]["config"]["steps"] == 8
        assert len(lines) == 1 + 8
        assert ckpt.with_suffix(".loss.png").stat().st_size > 1000

        rep_path = ws / "report.json"
        rc = main(["eval", "--ckpt", str(ckpt), "--data", str(test_file),
                   "--out", str(rep_path), "--probe-emd"])
        assert rc == 0
        rep = json.loads(rep_path.read_text())
        assert rep["dataset_hash"] == data.content_hash(test_file)
        assert 0.0 <= rep["metrics"]["top1"] <= 1.0
        assert rep["emd"]["mean"] >= 0.0
        assert rep_path.with_suffix(".png").exists()

    def test_eval_rerun_identical(self, ws):
        train_file = gen(ws)
        ckpt = ws / "m.ilac"
        main(["train", "--config", str(ws / "run.cfg"),
              "--data", str(train_file), "--out", str(ckpt)])
        out1, out2 = ws / "r1.json", ws / "r2.json"
        main(["eval", "--ckpt", str(ckpt), "--data", str(train_file), "--out", str(out1)])
        main(["eval", "--ckpt", str(ckpt), "--data", str(train_file), "--out", str(out2)])
        assert json.loads(out1.read_text())["metrics"] == \
            json.loads(out2.read_text())["metrics"]

    def test_mismatched_dataset_rejected(self, ws):
        train_file = gen(ws)
        other_cfg = ws / "other.cfg"
        other_cfg.write_text(TINY_CFG.replace("height = 16", "height = 32")
                             .replace("width = 16", "width = 32"))
        ckpt = ws / "m.ilac"
        rc = main(["train", "--config", str(other_cfg),
                   "--data", str(train_file), "--out", str(ckpt)])
        assert rc == 1 and not ckpt.exists()

    def test_unknown_config_key_exits_nonzero(self, ws):
        bad = ws / "bad.cfg"
        bad.write_text("not_a_key = 3\n")
        rc = main(["train", "--config", str(bad),
                   "--data", "whatever.ilav", "--out", str(ws / "m.ilac")])
        assert rc == 1


class TestAblate:
    def test_strategy_csv(self, ws):
        out = ws / "strat.csv"
        rc = main(["ablate", "--config", str(ws / "run.cfg"), "--axis", "strategy",
                   "--seeds", "2", "--out", str(out)])
        assert rc == 0
        text = out.read_text().splitlines()
        comments = [l for l in text if l.startswith("# ")]
        assert any(l.startswith("# config:") for l in comments)
        assert any(l.startswith("# dataset_hash:") for l in comments)
        body = [l for l in text if not l.startswith("#")]
        assert body[0].split(",")[:4] == ["axis", "value", "seed", "top1"]
        assert len(body) == 1 + 3 * 2
        assert out.with_suffix(".png").exists()

    def test_bad_axis_exits_two(self, ws, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["ablate", "--config", str(ws / "run.cfg"), "--axis", "nope",
                  "--out", str(ws / "x.csv")])
        assert exc.value.code == 2  # argparse usage error


class TestFlopsGradcheck:
    def test_flops_csv_schema(self, tmp_path):
        out = tmp_path / "costs.csv"
        assert main(["flops", "--out", str(out)]) == 0
        body = [l for l in out.read_text().splitlines() if not l.startswith("#")]
        header = body[0].split(",")
        assert header[0] == "scheme" and "macs" in header and "flops" in header
        assert len(body) == 1 + 6
        schemes = [l.split(",")[0] for l in body[1:]]
        assert schemes[0] == "spatial"  # cheapest first
        assert out.with_suffix(".png").exists()

    def test_gradcheck_all_pass(self, tmp_path):
        out = tmp_path / "grad.csv"
        assert main(["gradcheck", "--out", str(out)]) == 0
        body = [l for l in out.read_text().splitlines() if not l.startswith("#")]
        rows = [l.split(",") for l in body[1:]]
        assert all(r[2] == "true" for r in rows)
        assert {"end_to_end"} <= {r[0] for r in rows}
