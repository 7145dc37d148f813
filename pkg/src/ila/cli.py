"""Command-line entry point: one binary, subcommand per task.

Commands:
  gen        write a synthetic dataset file, plus a clip-montage figure
  train      fit a model from a config -> checkpoint, JSONL log, loss figure
  eval       score a checkpoint on a dataset -> JSON report, confusion figure
  ablate     sweep one axis -> CSV rows, bar-chart figure
  flops      analytical cost table for the six schemes -> CSV, chart
  gradcheck  finite-difference pass/fail listing per op -> CSV

Logs go to standard error; data goes to files (or stdout for gradcheck
without --out).  Every delimited/JSON result embeds the resolved config
and the git-style hash of the dataset it was computed from, so any number
in any artifact can be traced to exact inputs.  All commands are
deterministic under fixed seeds; exit status is 0 only on full success.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import data, gradcheck, metrics, model, nn, objective, report, train
from .align import InvalidParams
from .config import BadValue, RunConfig, UnknownKey
from .model import CorruptCheckpoint
from .tensor import NonFinite, NotScalar, ShapeMismatch, param

_USAGE_ERRORS = (
    UnknownKey, BadValue, InvalidParams, ShapeMismatch, NotScalar,
    data.InfeasibleSpec, data.CorruptFile, CorruptCheckpoint,
    train.UnknownAxis, metrics.BadK, objective.BadLabel,
    FileNotFoundError, IsADirectoryError, ValueError, NonFinite,
)


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _load_run(args) -> RunConfig:
    run = RunConfig.load(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        run = replace(run, seed=args.seed)
    run.validate()
    return run


def _prepare_out(path_str: str) -> Path:
    path = Path(path_str)
    if path.parent and not path.parent.exists():
        os.makedirs(path.parent, exist_ok=True)
    return path


def _check_meta(meta: data.DatasetMeta, mc: model.ModelConfig) -> None:
    pairs = [("frames", meta.frames, mc.frames), ("height", meta.height, mc.height),
             ("width", meta.width, mc.width),
             ("num_classes", meta.num_classes, mc.num_classes)]
    for name, got, want in pairs:
        if got != want:
            raise ValueError(f"dataset {name}={got} does not match config {name}={want}")


# ---------------------------------------------------------------------------
# Commands


def cmd_gen(args) -> int:
    run = _load_run(args)
    if getattr(args, "seed", None) is not None:
        run = replace(run, data_seed=args.seed)
    spec = run.task_spec(args.split)
    n = run.train_samples if args.split == "train" else run.test_samples
    labels, clips = data.generate(spec, n)
    out = _prepare_out(args.out)
    data.write_dataset(out, labels, clips)
    fig = report.save_clip_montage(clips, labels, out.with_suffix(".png"))
    _log(f"gen: wrote {n} {args.split} clips to {out} "
         f"(hash {data.content_hash(out)[:12]}), montage {fig}")
    return 0


def cmd_train(args) -> int:
    run = _load_run(args)
    labels, clips, meta = data.read_dataset(args.data)
    mc = run.model_config()
    _check_meta(meta, mc)
    ds_hash = data.content_hash(args.data)
    _log(f"train: {meta.n} clips from {args.data} (hash {ds_hash[:12]}), "
         f"{run.steps} steps")
    result = train.train(run, labels, clips, log_every=args.log_every)
    out = _prepare_out(args.out)
    model.save_checkpoint(out, result.params, result.model_cfg, extra={
        "run_config": run.to_dict(),
        "dataset_hash": ds_hash,
        "final": result.history[-1],
        "seconds": round(result.seconds, 2),
    })
    log_path = out.with_suffix(".log.jsonl")
    with open(log_path, "w") as f:
        f.write(json.dumps({"config": run.to_dict(), "dataset_hash": ds_hash}) + "\n")
        for row in result.history:
            f.write(json.dumps(row) + "\n")
    fig = report.save_loss_curves(result.history, out.with_suffix(".loss.png"))
    _log(f"train: finished in {result.seconds:.1f}s, final total loss "
         f"{result.history[-1]['total']:+.4f}; wrote {out}, {log_path}, {fig}")
    return 0


def cmd_eval(args) -> int:
    params, mc, extra = model.load_checkpoint(args.ckpt)
    labels, clips, meta = data.read_dataset(args.data)
    _check_meta(meta, mc)
    ds_hash = data.content_hash(args.data)
    scores = train.predict_scores(params, mc, clips)
    result = train.evaluate_scores(scores, labels, mc.num_classes)
    rep = {
        "config": mc.to_dict(),
        "train_provenance": extra,
        "dataset": str(args.data),
        "dataset_hash": ds_hash,
        "checkpoint_hash": data.content_hash(args.ckpt),
        "metrics": result,
    }
    if args.probe_emd:
        probe = metrics.mi_probe(params, mc, data.to_float(clips, mc.np_dtype))
        rep["emd"] = {"mean": probe.mean,
                      "per_video_first10": probe.per_video[:10].tolist()}
    out = _prepare_out(args.out)
    with open(out, "w") as f:
        json.dump(rep, f, indent=2)
        f.write("\n")
    fig = report.save_confusion(scores, labels, out.with_suffix(".png"))
    _log(f"eval: top1={result['top1']:.4f} on {result['n']} clips; "
         f"wrote {out}, {fig}")
    return 0


def _write_csv(out: Path, provenance: dict, fieldnames: list[str],
               rows: list[dict]) -> None:
    # Provenance rides along as comment lines above the CSV header.
    with open(out, "w", newline="") as f:
        for key, value in provenance.items():
            f.write(f"# {key}: {value}\n")
        w = csv.DictWriter(f, fieldnames=fieldnames)
        w.writeheader()
        w.writerows(rows)


def cmd_ablate(args) -> int:
    run = _load_run(args)
    if args.seeds < 1:
        raise ValueError("--seeds must be at least 1")
    base = run.seed
    seeds = tuple(base + i for i in range(args.seeds))
    _log(f"ablate: axis={args.axis}, seeds={list(seeds)}, "
         f"{run.steps} steps per cell")
    rows = train.run_ablation(run, args.axis, seeds=seeds, log=True)
    labels, clips = data.generate(run.task_spec("train"), run.train_samples)
    ds_hash = data.bytes_hash(data.encode_dataset(labels, clips))
    out = _prepare_out(args.out)
    provenance = {"config": " ".join(f"{k}={v}" for k, v in run.to_dict().items()),
                  "dataset_hash": ds_hash}
    _write_csv(out, provenance, list(rows[0].keys()), rows)
    fig = report.save_ablation_chart(rows, args.axis, out.with_suffix(".png"))
    _log(f"ablate: wrote {len(rows)} rows to {out}, chart {fig}")
    return 0


def cmd_flops(args) -> int:
    p = metrics.CostParams(frames=args.frames, dim=args.dim, blocks=args.depth)
    table = metrics.cost_table(p)
    asym = {s: metrics.asymptotic_cost(s, p) for s in metrics.SCHEMES}
    spatial = next(r.macs for r in table if r.scheme == "spatial")
    rows = [{
        "scheme": r.scheme,
        "frames": p.frames, "grid_h": p.grid_h, "grid_w": p.grid_w,
        "dim": p.dim, "blocks": p.blocks,
        "macs": r.macs, "flops": r.flops,
        "ratio_vs_spatial": round(r.macs / spatial, 4),
        "asymptotic_value": asym[r.scheme],
    } for r in table]
    out = _prepare_out(args.out)
    _write_csv(out, {"convention": "1 MAC = 2 FLOPs; normalization/softmax ignored"},
               list(rows[0].keys()), rows)
    fig = report.save_cost_chart(table, asym, out.with_suffix(".png"))
    _log(f"flops: wrote {len(rows)} schemes to {out}, chart {fig}")
    return 0


def _end_to_end_check(seed: int) -> gradcheck.OpCheckResult:
    """Directional FD check of the full loss on a tiny 64-bit model."""
    cfg = model.ModelConfig(frames=2, height=16, width=16, patch=8, dim=8,
                            blocks=1, heads=2, aligned_blocks=(1,),
                            dtype="float64")
    rng = np.random.default_rng(seed)
    params = model.init_model(cfg, seed=seed, zero_point_head=False)
    clip = param(rng.random((1, cfg.frames, cfg.height, cfg.width, 3)))
    labels = np.array([seed % cfg.num_classes])

    def loss():
        out = model.forward(clip, params, cfg)
        sim = objective.similarity_loss(out.logits, labels, 0.1)
        return objective.total_loss(sim, objective.alignment_loss(out.mi_tokens), 0.1)

    leaves = [clip] + [t for _, t in nn.named_tensors(params)]
    err = gradcheck.check_function(loss, leaves, rng)
    return gradcheck.OpCheckResult("end_to_end", err, err < 1e-3)


def cmd_gradcheck(args) -> int:
    results = gradcheck.run_op_suite(seed=args.seed or 0)
    results.append(_end_to_end_check(args.seed or 0))
    rows = [{"op": r.kind, "max_rel_err": f"{r.max_rel_err:.3e}",
             "pass": str(r.ok).lower()} for r in results]
    if args.out:
        out = _prepare_out(args.out)
        _write_csv(out, {"seed": args.seed or 0}, ["op", "max_rel_err", "pass"], rows)
        _log(f"gradcheck: wrote {len(rows)} rows to {out}")
    else:
        w = csv.DictWriter(sys.stdout, fieldnames=["op", "max_rel_err", "pass"])
        w.writeheader()
        w.writerows(rows)
    failed = [r.kind for r in results if not r.ok]
    if failed:
        _log(f"gradcheck: FAILED ops: {', '.join(failed)}")
        return 1
    _log(f"gradcheck: all {len(results)} checks passed")
    return 0


# ---------------------------------------------------------------------------
# Argument wiring


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="ila",
        description="Video recognition with implicitly aligned frame pairs: "
                    "data synthesis, training, evaluation, and diagnostics.")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(fn=fn)
        p.add_argument("--config", help="key=value config file (defaults used if omitted)")
        p.add_argument("--seed", type=int, help="override the config seed")
        return p

    p = add("gen", cmd_gen, "write a dataset file and a montage figure")
    p.add_argument("--out", required=True, help="dataset path to write")
    p.add_argument("--split", choices=("train", "test"), default="train")

    p = add("train", cmd_train, "train a model, write checkpoint + log + figure")
    p.add_argument("--data", required=True, help="training dataset file")
    p.add_argument("--out", required=True, help="checkpoint path to write")
    p.add_argument("--log-every", type=int, default=50)

    p = add("eval", cmd_eval, "evaluate a checkpoint, write JSON report + figure")
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--data", required=True, help="evaluation dataset file")
    p.add_argument("--out", required=True, help="JSON report path")
    p.add_argument("--probe-emd", action="store_true",
                   help="include the adjacent-frame EMD probe")

    p = add("ablate", cmd_ablate, "sweep one axis, write CSV + chart")
    p.add_argument("--axis", required=True, choices=train.ABLATION_AXES)
    p.add_argument("--out", required=True, help="CSV path to write")
    p.add_argument("--seeds", type=int, default=3,
                   help="number of consecutive seeds per cell")

    p = add("flops", cmd_flops, "analytical cost table, write CSV + chart")
    p.add_argument("--out", required=True, help="CSV path to write")
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--dim", type=int, default=768)
    p.add_argument("--depth", type=int, default=12)

    p = add("gradcheck", cmd_gradcheck, "finite-difference listing per op")
    p.add_argument("--out", help="CSV path (stdout if omitted)")
    return ap


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except _USAGE_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
