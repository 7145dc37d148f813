"""Diagnostics: exact earth-mover distance between token sets, the
adjacent-frame transport probe, an analytical cost model for six temporal
schemes, and top-k accuracy.

The cost model counts multiply-accumulates (MACs).  Reference budgets in
the video-recognition literature usually report MACs under the name FLOPs;
`flops = 2 * macs` is also exposed for the strict convention.  Each
non-spatial scheme is counted as the shared per-frame backbone plus that
scheme's own temporal module, mirroring how such comparisons stack a
temporal mechanism on a frozen-architecture image backbone.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import model as mdl
from .tensor import const


class BadK(ValueError):
    """top-k asked for an impossible k."""


# ---------------------------------------------------------------------------
# Exact assignment / earth mover distance


def _assignment_min_cost(cost: np.ndarray) -> float:
    """Minimum-cost perfect matching on a square cost matrix.

    Shortest-augmenting-path algorithm with dual potentials, O(n^3).
    """
    n = cost.shape[0]
    INF = float("inf")
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    match = np.zeros(n + 1, dtype=np.int64)  # match[j] = row assigned to column j
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = np.full(n + 1, INF)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match[j0]
            delta = INF
            j1 = 0
            reduced = cost[i0 - 1] - u[i0] - v[1:]
            better = ~used[1:] & (reduced < minv[1:])
            minv[1:][better] = reduced[better]
            way[1:][better] = j0
            open_j = np.flatnonzero(~used[1:]) + 1
            if open_j.size:
                j1 = int(open_j[np.argmin(minv[open_j])])
                delta = minv[j1]
            u[match[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = int(way[j0])
            match[j0] = match[j1]
            j0 = j1
    return float(sum(cost[match[j] - 1, j - 1] for j in range(1, n + 1)))


def _normalize_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.maximum(norms, 1e-12)


def _pair_cost(a: np.ndarray, b: np.ndarray, normalize: bool) -> np.ndarray:
    if a.ndim != 2 or a.shape != b.shape:
        raise ValueError(f"token sets must share shape (n, d), got {a.shape} vs {b.shape}")
    if normalize:
        a, b = _normalize_rows(a), _normalize_rows(b)
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt((diff * diff).sum(-1))


def emd_pair(a: np.ndarray, b: np.ndarray, normalize: bool = True) -> float:
    """Exact earth-mover distance between two equal-size token sets.

    Rows are L2-normalized first (by default), ground cost is Euclidean,
    and the optimal one-to-one transport cost is averaged per token.
    """
    cost = _pair_cost(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64),
                      normalize)
    return _assignment_min_cost(cost) / cost.shape[0]


def emd_pair_bruteforce(a: np.ndarray, b: np.ndarray, normalize: bool = True) -> float:
    """Factorial-time oracle for `emd_pair`; refuses n > 8."""
    cost = _pair_cost(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64),
                      normalize)
    n = cost.shape[0]
    if n > 8:
        raise ValueError(f"brute force at n={n} would enumerate {n}! permutations")
    rows = np.arange(n)
    best = min(cost[rows, perm].sum() for perm in itertools.permutations(range(n)))
    return float(best) / n


@dataclass
class EmdReport:
    per_video: np.ndarray  # (n,) mean adjacent-frame distance per clip
    mean: float


def mi_probe(params: mdl.ModelParams, cfg: mdl.ModelConfig, clips: np.ndarray,
             batch: int = 16) -> EmdReport:
    """Mean adjacent-frame EMD over final-block patch tokens.

    Lower values mean adjacent frames carry more mutually redundant
    information, the quantity the alignment branch is built to raise.
    `clips` is float (n, T, H, W, 3) in [0, 1].
    """
    per_video = []
    for lo in range(0, len(clips), batch):
        chunk = clips[lo : lo + batch].astype(cfg.np_dtype)
        out = mdl.forward(const(chunk), params, cfg)
        tokens = out.tokens.data[:, :, : cfg.cells, :]  # (b, T, hw, d)
        for vid in tokens:
            dists = [emd_pair(vid[t], vid[t + 1]) for t in range(len(vid) - 1)]
            per_video.append(float(np.mean(dists)))
    arr = np.array(per_video)
    return EmdReport(arr, float(arr.mean()))


# ---------------------------------------------------------------------------
# Cost model

SCHEMES = ("spatial", "frame_level", "ila", "divided_st", "ata", "joint_st")


@dataclass
class CostParams:
    frames: int = 8
    grid_h: int = 7
    grid_w: int = 7
    dim: int = 768
    blocks: int = 12
    mlp_ratio: int = 4
    conv_k: int = 3
    conv_channels: int = 16
    conv_depth: str = "standard"

    @property
    def cells(self) -> int:
        return self.grid_h * self.grid_w

    def validate(self) -> None:
        for name in ("frames", "grid_h", "grid_w", "dim", "blocks", "mlp_ratio",
                     "conv_k", "conv_channels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")


def msa_macs(n_tokens: int, d: int) -> int:
    """Projections 4Nd^2 plus attention map and mixing 2N^2 d."""
    return 4 * n_tokens * d * d + 2 * n_tokens * n_tokens * d


def mlp_macs(n_tokens: int, d: int, ratio: int = 4) -> int:
    return 2 * ratio * n_tokens * d * d


def transformer_block_macs(n_tokens: int, d: int, ratio: int = 4) -> int:
    return msa_macs(n_tokens, d) + mlp_macs(n_tokens, d, ratio)


def conv_macs(out_ch: int, in_ch: int, k: int, h: int, w: int) -> int:
    return out_ch * in_ch * k * k * h * w


def _point_predictor_macs(p: CostParams) -> int:
    """Per frame pair: stem conv, optional deep stages, 4-channel head."""
    h, w, c = p.grid_h, p.grid_w, p.conv_channels
    total = conv_macs(c, 2 * p.dim, p.conv_k, h, w)
    if p.conv_depth == "deep":
        total += 2 * conv_macs(c, c, p.conv_k, h, w)
    total += conv_macs(4, c, p.conv_k, h, w)
    return total


@dataclass
class SchemeCost:
    scheme: str
    macs: int
    flops: int
    breakdown: dict = field(default_factory=dict)


def exact_cost(scheme: str, p: CostParams) -> SchemeCost:
    """Layer-by-layer MAC count of the scheme's executed model.

    All schemes share the per-frame spatial backbone (L blocks over hw+1
    tokens per frame) and the small video head; each adds its own temporal
    module per block:

    * spatial:     nothing.
    * frame_level: one frame-token transformer branch (T tokens).
    * ila:         point-predictor convs per frame pair, mask+pool muls,
                   and one extra attended token per frame.
    * divided_st:  time-axis attention over all patch tokens.
    * ata:         divided_st plus per-pair cost matrices and an O(n^3)
                   assignment solve.
    * joint_st:    a joint space-time transformer branch (T*hw+1 tokens).
    """
    p.validate()
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
    T, d, L, hw = p.frames, p.dim, p.blocks, p.cells
    N = hw + 1
    parts = {
        "spatial_blocks": L * T * transformer_block_macs(N, d, p.mlp_ratio),
        "video_head": msa_macs(T, d),
    }
    if scheme == "frame_level":
        parts["temporal"] = L * transformer_block_macs(T, d, p.mlp_ratio)
    elif scheme == "ila":
        per_pair = _point_predictor_macs(p)
        widen = msa_macs(N + 1, d) - msa_macs(N, d)
        mask_and_pool = 2 * hw * d
        parts["temporal"] = L * T * (per_pair + widen + mask_and_pool)
    elif scheme == "divided_st":
        parts["temporal"] = L * (4 * T * hw * d * d + 2 * T * T * hw * d)
    elif scheme == "ata":
        parts["temporal"] = L * (4 * T * hw * d * d + 2 * T * T * hw * d
                                 + (T - 1) * (hw * hw * d + hw ** 3))
    elif scheme == "joint_st":
        parts["temporal"] = L * transformer_block_macs(T * hw + 1, d, p.mlp_ratio)
    macs = sum(parts.values())
    return SchemeCost(scheme, macs, 2 * macs, parts)


def asymptotic_cost(scheme: str, p: CostParams) -> int:
    """The published complexity expressions with all constants set to 1."""
    p.validate()
    T, d, h, w, k = p.frames, p.dim, p.grid_h, p.grid_w, p.conv_k
    spatial = T * h * h * w * w * d
    table = {
        "spatial": spatial,
        "frame_level": T * T * d + spatial,
        "ila": T * h * w * k * k * d + spatial,
        "divided_st": T * T * h * w * d + spatial,
        "ata": T * h ** 3 * w ** 3 * d + T * T * h * w * d + spatial,
        "joint_st": T * T * h * h * w * w * d,
    }
    if scheme not in table:
        raise ValueError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
    return table[scheme]


def cost_table(p: CostParams) -> list[SchemeCost]:
    """All six schemes, cheapest exact count first."""
    rows = [exact_cost(s, p) for s in SCHEMES]
    rows.sort(key=lambda r: r.macs)
    return rows


# ---------------------------------------------------------------------------
# Accuracy


def topk_accuracy(scores: np.ndarray, labels: np.ndarray, k: int = 1) -> float:
    """Fraction of rows whose label is among the k best scores.

    Ties break toward the lower class index, deterministically.
    """
    scores = np.asarray(scores)
    labels = np.asarray(labels)
    if scores.ndim != 2 or labels.shape != (scores.shape[0],):
        raise ValueError(f"scores {scores.shape} vs labels {labels.shape}")
    if not 1 <= k <= scores.shape[1]:
        raise BadK(f"k={k} impossible for {scores.shape[1]} classes")
    order = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    return float((order == labels[:, None]).any(axis=1).mean())
