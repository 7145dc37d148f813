"""Training and evaluation loops.

One tape per step over the whole batch; gradients, updates, and batch order
are all deterministic functions of the config seeds, so rerunning a config
reproduces every logged metric exactly.
"""

from __future__ import annotations

import ctypes
import math
import sys
import time
from dataclasses import dataclass, replace

import numpy as np

from . import data, metrics, model, objective
from .config import RunConfig
from .tensor import NonFinite, Tape, const, finite_checks

_allocator_tuned = False


def _tune_allocator() -> None:
    """Keep multi-MB temporaries on the heap instead of mmap round trips.

    Each step allocates and frees hundreds of MB of short-lived arrays; with
    glibc defaults those go through mmap/munmap and the page faults dominate
    the step time.  Raising the thresholds is a no-op on other libcs.
    """
    global _allocator_tuned
    if _allocator_tuned:
        return
    _allocator_tuned = True
    try:
        libc = ctypes.CDLL(None)
        libc.mallopt(ctypes.c_int(-3), ctypes.c_int(1 << 28))  # M_MMAP_THRESHOLD
        libc.mallopt(ctypes.c_int(-1), ctypes.c_int(1 << 28))  # M_TRIM_THRESHOLD
    except (OSError, AttributeError):
        pass


@dataclass
class TrainResult:
    params: model.ModelParams
    model_cfg: model.ModelConfig
    history: list[dict]
    seconds: float


def _batch_order(rng: np.random.Generator, n: int, batch: int, steps: int):
    """Yield index arrays, reshuffling after each pass over the data."""
    emitted = 0
    while emitted < steps:
        perm = rng.permutation(n)
        for lo in range(0, n - batch + 1, batch):
            yield perm[lo : lo + batch]
            emitted += 1
            if emitted == steps:
                return


def train(run: RunConfig, labels: np.ndarray, clips_u8: np.ndarray,
          log_every: int = 0) -> TrainResult:
    """Train a model described by `run` on the given samples."""
    _tune_allocator()
    run.validate()
    mc = run.model_config()
    params = model.init_model(mc, seed=run.seed, zero_point_head=False)
    optim = objective.AdamW(params, run.optimizer_config())
    clips = data.to_float(clips_u8, mc.np_dtype)
    labels = np.asarray(labels, dtype=np.int64)
    order = _batch_order(np.random.default_rng(run.seed), len(labels),
                         min(run.batch_size, len(labels)), run.steps)

    history = []
    start = time.perf_counter()
    for step, idx in enumerate(order, start=1):
        # Per-op finiteness scans are off in the hot loop; checking the loss
        # scalar below catches any NaN/Inf before the parameter update.
        with finite_checks(False), Tape() as tape:
            out = model.forward(const(clips[idx]), params, mc)
            sim = objective.similarity_loss(out.logits, labels[idx], run.label_smoothing)
            if out.mi_tokens:
                align_term = objective.alignment_loss(out.mi_tokens)
                w = objective.gamma_at(step, run.gamma, run.gamma_delay_steps,
                                       run.gamma_ramp_steps)
                total = objective.total_loss(sim, align_term, w) if w != 0.0 else sim
            else:
                align_term = None
                total = sim
            if not math.isfinite(total.item()):
                raise NonFinite(f"loss diverged at step {step}")
            grads = tape.backward(total)
        lr = optim.step(grads)
        history.append({
            "step": step,
            "total": float(total.item()),
            "sim": float(sim.item()),
            "align": float(align_term.item()) if align_term is not None else 0.0,
            "lr": lr,
        })
        if log_every and (step % log_every == 0 or step == 1):
            h = history[-1]
            print(f"step {step:5d}  total {h['total']:+.4f}  sim {h['sim']:.4f}  "
                  f"align {h['align']:+.4f}  lr {lr:.2e}", file=sys.stderr)
    return TrainResult(params, mc, history, time.perf_counter() - start)


def predict_scores(params: model.ModelParams, mc: model.ModelConfig,
                   clips_u8: np.ndarray, batch: int = 64) -> np.ndarray:
    """Raw score rows (n, num_classes) for a u8 clip array."""
    clips = data.to_float(clips_u8, mc.np_dtype)
    scores = np.empty((len(clips), mc.num_classes))
    for lo in range(0, len(clips), batch):
        out = model.forward(const(clips[lo : lo + batch]), params, mc)
        scores[lo : lo + batch] = out.logits.data
    return scores


def evaluate_scores(scores: np.ndarray, labels: np.ndarray,
                    num_classes: int) -> dict:
    """Top-1/top-k accuracy plus the mean similarity loss from score rows."""
    labels = np.asarray(labels, dtype=np.int64)
    k2 = min(5, num_classes)
    return {
        "n": len(labels),
        "top1": metrics.topk_accuracy(scores, labels, 1),
        f"top{k2}": metrics.topk_accuracy(scores, labels, k2),
        "mean_sim_loss": float(objective.similarity_loss(
            const(scores), labels).item()),
    }


def evaluate(params: model.ModelParams, mc: model.ModelConfig,
             labels: np.ndarray, clips_u8: np.ndarray, batch: int = 64) -> dict:
    """Top-1/top-k accuracy plus the mean losses over a dataset."""
    scores = predict_scores(params, mc, clips_u8, batch)
    return evaluate_scores(scores, np.asarray(labels, dtype=np.int64), mc.num_classes)


# ---------------------------------------------------------------------------
# Ablation harness

ABLATION_AXES = ("strategy", "blocks", "mi_variant", "gamma")


class UnknownAxis(ValueError):
    """The requested ablation axis is not one of ABLATION_AXES."""


def _block_groups(depth: int) -> list[str]:
    """Contiguous alignment-placement groups plus the all-blocks row.

    depth 12 -> ["1-3", "4-6", "7-9", "10-12", "1-12"]; small depths fall
    back to singleton groups.
    """
    n = min(4, depth)
    base, rem = divmod(depth, n)
    groups, lo = [], 1
    for i in range(n):
        hi = lo + base + (1 if i < rem else 0) - 1
        groups.append(f"{lo}-{hi}" if hi > lo else f"{lo}")
        lo = hi + 1
    if depth > 1:
        groups.append(f"1-{depth}")
    return groups


def ablation_cells(run: RunConfig, axis: str) -> list[tuple[str, RunConfig]]:
    """(label, config) pairs for one sweep axis; the base config is untouched."""
    if axis == "strategy":
        return [(v, replace(run, strategy=v)) for v in ("adjacent", "first", "middle")]
    if axis == "mi_variant":
        variants = ["pool_concat", "elementwise_add", "direct_concat", "avg_pool"]
        return [(v, replace(run, mi_variant=v)) for v in variants]
    if axis == "blocks":
        return [(g, replace(run, aligned_blocks=g)) for g in _block_groups(run.blocks)]
    if axis == "gamma":
        return [(f"{g:g}", replace(run, gamma=g)) for g in (0.0, 0.05, 0.1, 0.2)]
    raise UnknownAxis(f"axis {axis!r} not in {ABLATION_AXES}")


def run_ablation(run: RunConfig, axis: str, seeds=(0, 1, 2),
                 log: bool = False) -> list[dict]:
    """Train and evaluate every cell of one axis on shared data.

    All cells see identical train/test samples; only the swept field and the
    seed change, so row differences isolate the axis under study.
    """
    cells = ablation_cells(run, axis)
    labels_tr, clips_tr = data.generate(run.task_spec("train"), run.train_samples)
    labels_te, clips_te = data.generate(run.task_spec("test"), run.test_samples)
    k2 = min(5, data.N_CLASSES)
    rows = []
    for value, cell in cells:
        for seed in seeds:
            cfg = replace(cell, seed=int(seed))
            res = train(cfg, labels_tr, clips_tr)
            ev = evaluate(res.params, res.model_cfg, labels_te, clips_te)
            rows.append({
                "axis": axis,
                "value": value,
                "seed": int(seed),
                "top1": ev["top1"],
                f"top{k2}": ev[f"top{k2}"],
                "sim_loss": ev["mean_sim_loss"],
                "final_align": res.history[-1]["align"],
                "seconds": round(res.seconds, 2),
            })
            if log:
                print(f"ablate {axis}={value} seed={seed}  "
                      f"top1={ev['top1']:.3f}  ({res.seconds:.0f}s)", file=sys.stderr)
    return rows
