"""Frame-pair alignment: predict an interactive point per frame pair, turn
it into a soft spatial mask, and pool the masked patch tokens into one
mutual-information token per frame.

Coordinates live in [-1, 1]^2 over the patch grid; cell (i, j) of an h x w
grid sits at (-1 + (2j+1)/w, -1 + (2i+1)/h), i.e. x varies with the column
and y with the row, and flat index i*w + j matches the row-major token
order used everywhere else.

The mask around a point p is

    weight(cell) = relu(eta - beta * relu(dist(cell, p) - delta))

a plateau of height eta and radius delta with linear falloff of slope beta;
the outer relu's zero subgradient means far-away cells stop contributing
exactly.  The distance gets a 1e-18 bias inside the square root so its
gradient stays finite when a cell coincides with the point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import nn
from .tensor import Tensor, concat, const

_DIST_EPS = 1e-18


class InvalidParams(ValueError):
    """Alignment configuration out of range."""


class Strategy(str, Enum):
    """Which reference frame each frame aligns against."""

    ADJACENT = "adjacent"
    FIRST = "first"
    MIDDLE = "middle"


class MiVariant(str, Enum):
    """How the pooled aligned features join the token sequence."""

    POOL_CONCAT = "pool_concat"        # extra token, dropped after attention
    ELEMENTWISE_ADD = "elementwise_add"  # aligned features added to patch rows
    DIRECT_CONCAT = "direct_concat"    # all aligned rows appended
    AVG_POOL = "avg_pool"              # unmasked mean token, no alignment
    NONE = "none"                      # plain spatial block


@dataclass
class AlignConfig:
    strategy: Strategy = Strategy.ADJACENT
    variant: MiVariant = MiVariant.POOL_CONCAT
    conv_depth: str = "standard"  # "standard" | "deep"
    conv_channels: int = 16
    eta: float = 1.0
    delta: float = 0.3
    beta: float = 1.0

    def validate(self) -> None:
        if self.eta <= 0:
            raise InvalidParams(f"mask amplitude eta must be positive, got {self.eta}")
        if self.delta < 0 or self.beta < 0:
            raise InvalidParams("mask radius delta and slope beta must be non-negative")
        if self.conv_depth not in ("standard", "deep"):
            raise InvalidParams(f"unknown conv depth {self.conv_depth!r}")
        if self.conv_channels < 1:
            raise InvalidParams("conv_channels must be at least 1")


def partner(t: int, T: int, strategy: Strategy) -> int:
    """Reference frame r(t) for frame t; both are 1-based, r(t) != t.

    adjacent: the previous frame, except frame 1 pairs forward with 2.
    first:    everything aligns to frame 1, which pairs with 2.
    middle:   everything aligns to the middle frame, which pairs backward.
    """
    if T < 2:
        raise InvalidParams(f"alignment needs at least 2 frames, got {T}")
    if not 1 <= t <= T:
        raise InvalidParams(f"frame index {t} outside 1..{T}")
    if strategy == Strategy.ADJACENT:
        return 2 if t == 1 else t - 1
    if strategy == Strategy.FIRST:
        return 2 if t == 1 else 1
    if strategy == Strategy.MIDDLE:
        m = math.ceil(T / 2)
        if t != m:
            return m
        return m - 1 if m > 1 else m + 1
    raise InvalidParams(f"unknown strategy {strategy!r}")


def grid_coords(h: int, w: int) -> np.ndarray:
    """(h*w, 2) array of cell-center (x, y) coordinates in [-1, 1]^2."""
    if h < 1 or w < 1:
        raise InvalidParams(f"grid {h}x{w} is empty")
    xs = -1.0 + (2.0 * np.arange(w) + 1.0) / w
    ys = -1.0 + (2.0 * np.arange(h) + 1.0) / h
    gx, gy = np.meshgrid(xs, ys)  # row-major: index i*w + j
    return np.stack([gx.reshape(-1), gy.reshape(-1)], axis=1)


def mask_from_points(points: Tensor, h: int, w: int, cfg: AlignConfig) -> Tensor:
    """Soft masks for a batch of points: (B, 2) -> (B, h*w)."""
    cfg.validate()
    B = points.shape[0]
    hw = h * w
    grid = grid_coords(h, w).astype(points.dtype)
    gx = const(np.broadcast_to(grid[:, 0], (B, hw)).copy())
    gy = const(np.broadcast_to(grid[:, 1], (B, hw)).copy())
    px = points[:, 0:1].broadcast_to((B, hw))
    py = points[:, 1:2].broadcast_to((B, hw))
    dx = gx - px
    dy = gy - py
    dist = (dx * dx + dy * dy + _DIST_EPS).sqrt()
    return ((dist - cfg.delta).relu() * (-cfg.beta) + cfg.eta).relu()


# ---------------------------------------------------------------------------
# Interactive-point predictor


@dataclass
class PointPredictorParams:
    """Conv stack mapping a channel-stacked frame pair to 4 point coords."""

    stem: nn.ConvParams          # 2d -> c
    stem_norm: nn.ChannelNormParams
    head: nn.ConvParams          # c -> 4
    extra: list = field(default_factory=list)  # deep variant: [(conv c->c, norm)]


def point_predictor_init(rng, d: int, cfg: AlignConfig, zero_head: bool = True,
                         dtype=None) -> PointPredictorParams:
    """Build the predictor; with `zero_head` both points start at the grid
    center and never react to input, the inert reference configuration.
    Training needs a live head, else the branch cannot learn."""
    c = cfg.conv_channels
    extra = []
    if cfg.conv_depth == "deep":
        extra = [(nn.conv_init(rng, c, c, 3, dtype), nn.channel_norm_init(c, dtype))
                 for _ in range(2)]
    head = nn.conv_init(rng, 4, c, 3, dtype)
    if zero_head:
        head.w.data[:] = 0.0
        head.b.data[:] = 0.0
    return PointPredictorParams(
        stem=nn.conv_init(rng, c, 2 * d, 3, dtype),
        stem_norm=nn.channel_norm_init(c, dtype),
        extra=extra,
        head=head,
    )


def predict_points(pair_maps: Tensor, p: PointPredictorParams) -> Tensor:
    """(P, 2d, h, w) channel-stacked pairs -> (P, 4) coords in [-1, 1].

    Columns 0:2 are the point for the frame itself, 2:4 for its partner.
    """
    x = nn.channel_norm(nn.conv2d(pair_maps, p.stem), p.stem_norm).relu()
    for conv_p, norm_p in p.extra:
        x = nn.channel_norm(nn.conv2d(x, conv_p), norm_p).relu()
    return nn.global_avg_pool(nn.conv2d(x, p.head)).tanh()


# ---------------------------------------------------------------------------
# Clip-level alignment


@dataclass
class ClipAlignment:
    points_own: Tensor      # (B, T, 2) point for each frame
    points_partner: Tensor  # (B, T, 2) point predicted for the reference frame
    masks: Tensor           # (B, T, hw)
    aligned: Tensor         # (B, T, hw, d) mask-weighted patch tokens
    mi: Tensor              # (B, T, d)   mean over cells of `aligned`


def _to_maps(patches: Tensor, h: int, w: int) -> Tensor:
    """(B, T, hw, d) row-major tokens -> (B, T, d, h, w) images."""
    B, T, hw, d = patches.shape
    return patches.transpose((0, 1, 3, 2)).reshape(B, T, d, h, w)


def align_clip(patches: Tensor, h: int, w: int, cfg: AlignConfig,
               p: PointPredictorParams) -> ClipAlignment:
    """Run alignment for every frame of a clip batch.

    `patches` is (B, T, hw, d).  Each frame t is paired with partner r(t)
    under the configured strategy; only the frame-side point is used for its
    mask.  The MI token is the mean of the masked patch tokens.
    """
    B, T, hw, d = patches.shape
    maps = _to_maps(patches, h, w)
    refs = concat([maps[:, partner(t, T, cfg.strategy) - 1 : partner(t, T, cfg.strategy)]
                   for t in range(1, T + 1)], axis=1)
    pairs = concat([maps, refs], axis=2).reshape(B * T, 2 * d, h, w)
    coords = predict_points(pairs, p)  # (B*T, 4)
    own = coords[:, 0:2]
    masks = mask_from_points(own, h, w, cfg)  # (B*T, hw)
    flat = patches.reshape(B * T, hw, d)
    aligned = flat * masks.reshape(B * T, hw, 1).broadcast_to((B * T, hw, d))
    mi = aligned.mean(axis=1)
    return ClipAlignment(
        points_own=own.reshape(B, T, 2),
        points_partner=coords[:, 2:4].reshape(B, T, 2),
        masks=masks.reshape(B, T, hw),
        aligned=aligned.reshape(B, T, hw, d),
        mi=mi.reshape(B, T, d),
    )


@dataclass
class PairAlignment:
    point_t: Tensor  # (2,)
    point_r: Tensor  # (2,)
    mask: Tensor     # (hw,)
    aligned: Tensor  # (hw, d)
    mi: Tensor       # (d,)


def align_pair(z_t: Tensor, z_r: Tensor, h: int, w: int, cfg: AlignConfig,
               p: PointPredictorParams) -> PairAlignment:
    """Single-pair alignment of two (hw, d) patch-token grids."""
    hw, d = z_t.shape
    if z_r.shape != z_t.shape or hw != h * w:
        raise InvalidParams(f"pair shapes {z_t.shape}/{z_r.shape} do not match {h}x{w} grid")
    pair = concat([z_t.transpose((1, 0)).reshape(1, d, h, w),
                   z_r.transpose((1, 0)).reshape(1, d, h, w)], axis=1)
    coords = predict_points(pair, p)
    mask = mask_from_points(coords[:, 0:2], h, w, cfg)  # (1, hw)
    aligned = z_t * mask.reshape(hw, 1).broadcast_to((hw, d))
    return PairAlignment(
        point_t=coords.reshape(4)[0:2],
        point_r=coords.reshape(4)[2:4],
        mask=mask.reshape(hw),
        aligned=aligned,
        mi=aligned.mean(axis=0),
    )
