"""Training objective: smoothed cross-entropy over class scores, an
alignment term that rewards agreement between temporally adjacent pooled
alignment tokens, and decoupled-weight-decay Adam with warmup plus cosine
decay.

The alignment term always pairs frame t with frame t-1, independent of
which partner the mask predictor was given; the two choices are separate
knobs by design.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .nn import named_tensors
from .tensor import Tensor, const

_NORM_EPS = 1e-8
_SQRT_BIAS = 1e-18  # keeps sqrt'(0) finite for exactly-zero tokens


class BadLabel(ValueError):
    """A label is outside [0, num_classes)."""


def smoothed_targets(labels: np.ndarray, num_classes: int, smoothing: float) -> np.ndarray:
    """One-hot rows with 1-eps on the label and eps/(K-1) spread elsewhere."""
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.size == 0:
        raise BadLabel(f"labels must be a non-empty vector, got shape {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise BadLabel(f"labels must be integers, got {labels.dtype}")
    if labels.min() < 0 or labels.max() >= num_classes:
        raise BadLabel(f"labels outside 0..{num_classes - 1}")
    if not 0.0 <= smoothing < 1.0:
        raise ValueError(f"smoothing must be in [0, 1), got {smoothing}")
    y = np.full((labels.size, num_classes), smoothing / (num_classes - 1))
    y[np.arange(labels.size), labels] = 1.0 - smoothing
    return y


def similarity_loss(scores: Tensor, labels: np.ndarray, smoothing: float = 0.0) -> Tensor:
    """Mean cross-entropy of softmax(scores) against smoothed targets."""
    B, K = scores.shape
    y = const(smoothed_targets(labels, K, smoothing).astype(scores.dtype))
    m = const(np.max(scores.data, axis=1, keepdims=True))
    zc = scores - m.broadcast_to(scores.shape)
    lse = zc.exp().sum(axis=1, keepdims=True).log()
    logp = zc - lse.broadcast_to(scores.shape)
    return -(y * logp).sum() / B


def _last_axis_norm(x: Tensor) -> Tensor:
    return ((x * x).sum(axis=-1) + _SQRT_BIAS).sqrt()


def alignment_loss(mi_tokens: list[Tensor]) -> Tensor:
    """Negative sum of adjacent-frame cosines, averaged over the batch.

    Each entry is (B, T, d) from one block.  The cosine denominator is
    eps + relu(|a||b| - eps), so identical tokens reach cosine 1 exactly
    while near-zero tokens stay finite.  Range: [-A*(T-1), A*(T-1)] for A
    contributing blocks.
    """
    if not mi_tokens:
        raise ValueError("alignment loss needs at least one block of tokens")
    total = None
    for mi in mi_tokens:
        B, T, d = mi.shape
        a = mi[:, 1:, :]
        b = mi[:, :-1, :]
        num = (a * b).sum(axis=-1)
        prod = _last_axis_norm(a) * _last_axis_norm(b)
        denom = (prod - _NORM_EPS).relu() + _NORM_EPS
        cos = num / denom
        term = -cos.sum() / B
        total = term if total is None else total + term
    return total


def total_loss(sim: Tensor, align_term: Tensor, gamma: float) -> Tensor:
    return sim + gamma * align_term


# ---------------------------------------------------------------------------
# Optimizer


@dataclass
class OptimizerConfig:
    lr: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-8
    weight_decay: float = 0.01
    warmup_steps: int = 100
    total_steps: int = 2000
    min_lr_ratio: float = 0.01


def gamma_at(step: int, gamma: float, delay: int, ramp: int) -> float:
    """Alignment weight at `step`: zero through `delay`, then linear over
    `ramp` steps up to the full value.  delay = ramp = 0 keeps it constant.

    Trained from scratch, the alignment term reaches its degenerate optimum
    (all interaction tokens identical) before classification finds any
    signal; delaying the pressure until the representation has formed keeps
    both losses productive.  `step` counts from 1.
    """
    if gamma == 0.0 or step <= delay:
        return 0.0
    if ramp <= 0:
        return gamma
    return gamma * min(1.0, (step - delay) / ramp)


def lr_at(step: int, cfg: OptimizerConfig) -> float:
    """Linear warmup to `lr`, then cosine decay to lr * min_lr_ratio.

    `step` counts from 1.
    """
    if step <= cfg.warmup_steps:
        return cfg.lr * step / max(1, cfg.warmup_steps)
    span = max(1, cfg.total_steps - cfg.warmup_steps)
    progress = min(1.0, (step - cfg.warmup_steps) / span)
    floor = cfg.lr * cfg.min_lr_ratio
    return floor + (cfg.lr - floor) * 0.5 * (1.0 + math.cos(math.pi * progress))


class AdamW:
    """Adam with decoupled weight decay; 1-d tensors (biases, norm gains,
    single tokens) are never decayed.  Parameters update in sorted-name
    order so a step is deterministic."""

    def __init__(self, params, cfg: OptimizerConfig):
        self.cfg = cfg
        if (isinstance(params, list) and params
                and all(isinstance(x, tuple) and isinstance(x[0], str) for x in params)):
            named = params  # already (name, tensor) pairs
        else:
            named = named_tensors(params)
        self.named = sorted(named, key=lambda nt: nt[0])
        if not self.named:
            raise ValueError("no parameters to optimize")
        self.m = [np.zeros_like(t.data) for _, t in self.named]
        self.v = [np.zeros_like(t.data) for _, t in self.named]
        self.t = 0

    def step(self, grads: dict[Tensor, Tensor]) -> float:
        """Apply one update in place; returns the learning rate used."""
        self.t += 1
        c = self.cfg
        lr = lr_at(self.t, c)
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for i, (_, p) in enumerate(self.named):
            g_t = grads.get(p)
            if g_t is None:
                continue
            g = g_t.data
            m = self.m[i]
            v = self.v[i]
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + c.eps)
            if p.ndim >= 2 and c.weight_decay:
                p.data -= lr * c.weight_decay * p.data
            p.data -= lr * update
        return lr

    def missing_grads(self, grads: dict[Tensor, Tensor]) -> list[str]:
        return [name for name, p in self.named if p not in grads]
