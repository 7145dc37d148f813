"""The video transformer: patch embedding, a stack of alignment-capable
attention blocks, and a temporal head producing one vector per clip.

Per-frame processing is fully factored: every block folds the (batch, time)
axes together, so frames only interact through the alignment branch and the
final head.  With alignment disabled the network is therefore exactly
invariant to frame order up to float rounding.

Token layout inside a frame: rows 0..hw-1 are the patch tokens in row-major
grid order, row hw is the classification token.  When a block appends extra
rows (the pooled alignment token, or the full aligned grid in the
direct-concat variant) they go after the classification token and are
dropped again right after attention, before the MLP.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import align as al
from . import nn
from .tensor import Tensor, concat, const, matmul, param


class ZeroVector(ArithmeticError):
    """Cosine scoring hit an exactly zero-length vector."""


class CorruptCheckpoint(ValueError):
    """Checkpoint bytes do not parse back into a model."""


@dataclass
class ModelConfig:
    frames: int = 4
    height: int = 32
    width: int = 32
    patch: int = 8
    dim: int = 64
    blocks: int = 4
    heads: int = 4
    aligned_blocks: tuple[int, ...] = (1, 2, 3, 4)  # 1-based block indices
    align: al.AlignConfig = field(default_factory=al.AlignConfig)
    num_classes: int = 8
    loss_mode: str = "cosine"  # "cosine" | "cross_entropy"
    tau: float = 0.07
    dtype: str = "float64"

    @property
    def grid_h(self) -> int:
        return self.height // self.patch

    @property
    def grid_w(self) -> int:
        return self.width // self.patch

    @property
    def cells(self) -> int:
        return self.grid_h * self.grid_w

    @property
    def tokens_per_frame(self) -> int:
        return self.cells + 1

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    def validate(self) -> None:
        if self.frames < 2:
            raise ValueError(f"need at least 2 frames, got {self.frames}")
        if self.height % self.patch or self.width % self.patch:
            raise ValueError(f"patch {self.patch} does not tile {self.height}x{self.width}")
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} not divisible by {self.heads} heads")
        if self.blocks < 1 or self.num_classes < 2:
            raise ValueError("need at least 1 block and 2 classes")
        bad = [b for b in self.aligned_blocks if not 1 <= b <= self.blocks]
        if bad or len(set(self.aligned_blocks)) != len(self.aligned_blocks):
            raise ValueError(f"aligned_blocks {self.aligned_blocks} invalid for {self.blocks} blocks")
        if self.loss_mode not in ("cosine", "cross_entropy"):
            raise ValueError(f"unknown loss mode {self.loss_mode!r}")
        if self.tau <= 0:
            raise ValueError("temperature tau must be positive")
        if self.dtype not in ("float64", "float32"):
            raise ValueError(f"dtype must be float64 or float32, got {self.dtype!r}")
        self.align.validate()

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in (
            "frames", "height", "width", "patch", "dim", "blocks", "heads",
            "num_classes", "loss_mode", "tau", "dtype")}
        d["aligned_blocks"] = list(self.aligned_blocks)
        d["align"] = {
            "strategy": self.align.strategy.value,
            "variant": self.align.variant.value,
            "conv_depth": self.align.conv_depth,
            "conv_channels": self.align.conv_channels,
            "eta": self.align.eta,
            "delta": self.align.delta,
            "beta": self.align.beta,
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        a = d["align"]
        cfg = cls(
            **{k: d[k] for k in (
                "frames", "height", "width", "patch", "dim", "blocks", "heads",
                "num_classes", "loss_mode", "tau", "dtype")},
            aligned_blocks=tuple(d["aligned_blocks"]),
            align=al.AlignConfig(
                strategy=al.Strategy(a["strategy"]),
                variant=al.MiVariant(a["variant"]),
                conv_depth=a["conv_depth"],
                conv_channels=a["conv_channels"],
                eta=a["eta"],
                delta=a["delta"],
                beta=a["beta"],
            ),
        )
        cfg.validate()
        return cfg


# ---------------------------------------------------------------------------
# Parameters


@dataclass
class BlockParams:
    norm1: nn.LayerNormParams
    attn: nn.AttentionParams
    norm2: nn.LayerNormParams
    mlp: nn.MlpParams
    predictor: al.PointPredictorParams | None


@dataclass
class HeadParams:
    attn: nn.AttentionParams          # over the T classification tokens
    class_embed: Tensor | None        # (K, d) for cosine scoring
    classifier: nn.LinearParams | None  # for cross-entropy scoring


@dataclass
class ModelParams:
    patch_proj: nn.LinearParams  # (3*patch^2, dim)
    pos: Tensor                  # (hw+1, dim), spatial only, shared over time
    cls: Tensor                  # (dim,)
    blocks: list[BlockParams]
    head: HeadParams


def _needs_predictor(cfg: ModelConfig, block_index: int) -> bool:
    return (block_index in cfg.aligned_blocks
            and cfg.align.variant in (al.MiVariant.POOL_CONCAT,
                                      al.MiVariant.ELEMENTWISE_ADD,
                                      al.MiVariant.DIRECT_CONCAT))


def init_model(cfg: ModelConfig, seed: int = 0, zero_point_head: bool = True) -> ModelParams:
    cfg.validate()
    rng = np.random.default_rng(seed)
    dt = cfg.np_dtype
    blocks = []
    for b in range(1, cfg.blocks + 1):
        pred = None
        if _needs_predictor(cfg, b):
            pred = al.point_predictor_init(rng, cfg.dim, cfg.align,
                                           zero_head=zero_point_head, dtype=dt)
        blocks.append(BlockParams(
            norm1=nn.layer_norm_init(cfg.dim, dt),
            attn=nn.attention_init(rng, cfg.dim, cfg.heads, dt),
            norm2=nn.layer_norm_init(cfg.dim, dt),
            mlp=nn.mlp_init(rng, cfg.dim, dtype=dt),
            predictor=pred,
        ))
    head = HeadParams(
        attn=nn.attention_init(rng, cfg.dim, cfg.heads, dt),
        class_embed=nn.trunc_normal(rng, (cfg.num_classes, cfg.dim), dtype=dt)
        if cfg.loss_mode == "cosine" else None,
        classifier=nn.linear_init(rng, cfg.dim, cfg.num_classes, dtype=dt)
        if cfg.loss_mode == "cross_entropy" else None,
    )
    return ModelParams(
        patch_proj=nn.linear_init(rng, 3 * cfg.patch * cfg.patch, cfg.dim, dtype=dt),
        pos=nn.trunc_normal(rng, (cfg.tokens_per_frame, cfg.dim), dtype=dt),
        cls=nn.trunc_normal(rng, (cfg.dim,), dtype=dt),
        blocks=blocks,
        head=head,
    )


# ---------------------------------------------------------------------------
# Forward


def patch_tokens(clip: Tensor, p: ModelParams, cfg: ModelConfig) -> Tensor:
    """(B, T, H, W, 3) pixels -> (B, T, hw+1, d) tokens with positions added."""
    B, T, H, W, C = clip.shape
    if (T, H, W, C) != (cfg.frames, cfg.height, cfg.width, 3):
        raise ValueError(f"clip shape {clip.shape} does not match config")
    h, w, P = cfg.grid_h, cfg.grid_w, cfg.patch
    x = clip.reshape(B, T, h, P, w, P, 3).transpose((0, 1, 2, 4, 3, 5, 6))
    x = x.reshape(B * T * h * w, 3 * P * P)
    tok = nn.linear(x, p.patch_proj).reshape(B, T, h * w, cfg.dim)
    cls = p.cls.reshape(1, 1, 1, cfg.dim).broadcast_to((B, T, 1, cfg.dim))
    seq = concat([tok, cls], axis=2)
    pos = p.pos.reshape(1, 1, cfg.tokens_per_frame, cfg.dim).broadcast_to(seq.shape)
    return seq + pos


def _fold_msa(x: Tensor, p: nn.AttentionParams) -> Tensor:
    B, T, N, d = x.shape
    return nn.msa(x.reshape(B * T, N, d), p).reshape(B, T, N, d)


def ist_block(x: Tensor, bp: BlockParams, cfg: ModelConfig, aligned: bool
              ) -> tuple[Tensor, Tensor | None, al.ClipAlignment | None]:
    """One block: optional alignment branch, attention, MLP, both residual.

    Returns (tokens, mi_tokens or None, alignment artifacts or None).
    """
    B, T, N, d = x.shape
    hw = cfg.cells
    variant = cfg.align.variant if aligned else al.MiVariant.NONE

    art = None
    mi = None
    seq = x
    if variant in (al.MiVariant.POOL_CONCAT, al.MiVariant.ELEMENTWISE_ADD,
                   al.MiVariant.DIRECT_CONCAT):
        art = al.align_clip(x[:, :, :hw, :], cfg.grid_h, cfg.grid_w, cfg.align, bp.predictor)
        mi = art.mi
    if variant == al.MiVariant.POOL_CONCAT:
        seq = concat([x, art.mi.reshape(B, T, 1, d)], axis=2)
    elif variant == al.MiVariant.DIRECT_CONCAT:
        seq = concat([x, art.aligned], axis=2)
    elif variant == al.MiVariant.ELEMENTWISE_ADD:
        seq = concat([x[:, :, :hw, :] + art.aligned, x[:, :, hw:, :]], axis=2)
    elif variant == al.MiVariant.AVG_POOL:
        mi = x[:, :, :hw, :].mean(axis=2)
        seq = concat([x, mi.reshape(B, T, 1, d)], axis=2)

    att = seq + _fold_msa(nn.layer_norm(seq, bp.norm1), bp.attn)
    keep = att[:, :, :N, :] if att.shape[2] != N else att  # drop appended rows
    out = keep + nn.mlp(nn.layer_norm(keep, bp.norm2), bp.mlp)
    return out, mi, art


def video_vector(tokens: Tensor, p: ModelParams, cfg: ModelConfig) -> Tensor:
    """Attention over the T classification tokens, then average: (B, d).

    No temporal positions are added, so the head is permutation-invariant in
    time; temporal order information can only enter through alignment.
    """
    cls = tokens[:, :, cfg.cells, :]  # (B, T, d)
    return (cls + nn.msa(cls, p.head.attn)).mean(axis=1)


def _normalize_rows(x: Tensor) -> Tensor:
    norms = (x * x).sum(axis=-1, keepdims=True).sqrt()
    if np.any(norms.data == 0.0):
        raise ZeroVector("cannot cosine-score a zero vector")
    return x / norms.broadcast_to(x.shape)


def class_scores(v: Tensor, p: ModelParams, cfg: ModelConfig) -> Tensor:
    """(B, d) video vectors -> (B, K) scores.

    Cosine mode: cosine similarity against learned class embeddings over
    temperature tau, so matching unit vectors score exactly 1/tau.
    """
    if cfg.loss_mode == "cosine":
        vn = _normalize_rows(v)
        cn = _normalize_rows(p.head.class_embed)
        return matmul(vn, cn.transpose((1, 0))) * (1.0 / cfg.tau)
    return nn.linear(v, p.head.classifier)


@dataclass
class ForwardResult:
    logits: Tensor                 # (B, K)
    video: Tensor                  # (B, d)
    tokens: Tensor                 # (B, T, hw+1, d) after the last block
    mi_tokens: list                # [(B, T, d)] one per block that emitted one
    alignments: list               # [ClipAlignment | None] same order


def forward(clip: Tensor, p: ModelParams, cfg: ModelConfig) -> ForwardResult:
    x = patch_tokens(clip, p, cfg)
    mi_tokens, alignments = [], []
    for i, bp in enumerate(p.blocks, start=1):
        x, mi, art = ist_block(x, bp, cfg, aligned=i in cfg.aligned_blocks)
        if mi is not None:
            mi_tokens.append(mi)
            alignments.append(art)
    v = video_vector(x, p, cfg)
    return ForwardResult(class_scores(v, p, cfg), v, x, mi_tokens, alignments)


# ---------------------------------------------------------------------------
# Checkpoints: magic, version, config JSON, then named raw tensors.

_CKPT_MAGIC = b"ILAC"
_CKPT_VERSION = 1
_DTYPE_CODES = {"float64": 0, "float32": 1}
_CODE_DTYPES = {0: np.float64, 1: np.float32}


def save_checkpoint(path, p: ModelParams, cfg: ModelConfig, extra: dict | None = None) -> None:
    cfg_blob = json.dumps({"model": cfg.to_dict(), "extra": extra or {}},
                          sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(_CKPT_MAGIC)
    buf.write(struct.pack("<H", _CKPT_VERSION))
    buf.write(struct.pack("<I", len(cfg_blob)))
    buf.write(cfg_blob)
    tensors = list(nn.named_tensors(p))
    buf.write(struct.pack("<I", len(tensors)))
    for name, t in tensors:
        nb = name.encode("utf-8")
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<BB", t.ndim, _DTYPE_CODES[str(t.dtype)]))
        buf.write(struct.pack(f"<{t.ndim}I", *t.shape))
        buf.write(np.ascontiguousarray(t.data, dtype=t.data.dtype).astype(
            t.data.dtype.newbyteorder("<")).tobytes())
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_checkpoint(path) -> tuple[ModelParams, ModelConfig, dict]:
    with open(path, "rb") as f:
        raw = f.read()
    buf = io.BytesIO(raw)

    def take(n: int, what: str) -> bytes:
        b = buf.read(n)
        if len(b) != n:
            raise CorruptCheckpoint(f"truncated while reading {what}")
        return b

    if take(4, "magic") != _CKPT_MAGIC:
        raise CorruptCheckpoint("bad magic; not a checkpoint file")
    (version,) = struct.unpack("<H", take(2, "version"))
    if version != _CKPT_VERSION:
        raise CorruptCheckpoint(f"unsupported checkpoint version {version}")
    (cfg_len,) = struct.unpack("<I", take(4, "config length"))
    try:
        blob = json.loads(take(cfg_len, "config").decode("utf-8"))
        cfg = ModelConfig.from_dict(blob["model"])
        extra = blob.get("extra", {})
    except (ValueError, KeyError) as e:
        raise CorruptCheckpoint(f"config block unreadable: {e}") from None

    p = init_model(cfg, seed=0)
    want = dict(nn.named_tensors(p))
    (count,) = struct.unpack("<I", take(4, "tensor count"))
    if count != len(want):
        raise CorruptCheckpoint(f"expected {len(want)} tensors, file has {count}")
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        name = take(name_len, "name").decode("utf-8")
        ndim, code = struct.unpack("<BB", take(2, "tensor header"))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim, "shape"))
        if code not in _CODE_DTYPES:
            raise CorruptCheckpoint(f"unknown dtype code {code}")
        dt = np.dtype(_CODE_DTYPES[code]).newbyteorder("<")
        data = np.frombuffer(take(int(np.prod(shape, dtype=np.int64)) * dt.itemsize, name), dtype=dt)
        if name not in want:
            raise CorruptCheckpoint(f"unexpected tensor {name!r}")
        t = want.pop(name)
        if tuple(shape) != t.shape:
            raise CorruptCheckpoint(f"tensor {name!r} shape {shape} != {t.shape}")
        t.data = data.astype(t.data.dtype).reshape(shape)
    if want:
        raise CorruptCheckpoint(f"missing tensors: {sorted(want)[:3]}...")
    if buf.read(1):
        raise CorruptCheckpoint("trailing bytes after last tensor")
    return p, cfg, extra
