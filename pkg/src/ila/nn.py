"""Neural building blocks on top of the tape: linear, layer norm, softmax,
multi-head self-attention, convolution via im2col, and the transformer MLP.

Everything here is a pure function of (inputs, params); parameters are plain
dataclasses of Tensors so they can be walked generically by `named_tensors`
for the optimizer and checkpointing.  Batched inputs fold any leading dims
into one; no function mutates its arguments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, is_dataclass
from typing import Iterator

import numpy as np

from .tensor import Tensor, apply, concat, const, matmul, param

LN_EPS = 1e-5


# ---------------------------------------------------------------------------
# Parameter containers


@dataclass
class LinearParams:
    w: Tensor  # (n_in, n_out)
    b: Tensor  # (n_out,)


@dataclass
class LayerNormParams:
    gain: Tensor  # (d,)
    bias: Tensor  # (d,)


@dataclass
class AttentionParams:
    q: LinearParams
    k: LinearParams
    v: LinearParams
    out: LinearParams
    heads: int


@dataclass
class MlpParams:
    fc1: LinearParams
    fc2: LinearParams


@dataclass
class ConvParams:
    w: Tensor  # (out_ch, in_ch, k, k)
    b: Tensor  # (out_ch,)


@dataclass
class ChannelNormParams:
    gain: Tensor  # (C,)
    bias: Tensor  # (C,)


def named_tensors(obj, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
    """Depth-first (name, tensor) walk over nested parameter dataclasses."""
    if isinstance(obj, Tensor):
        yield prefix, obj
    elif is_dataclass(obj):
        for f in fields(obj):
            child = getattr(obj, f.name)
            yield from named_tensors(child, f"{prefix}.{f.name}" if prefix else f.name)
    elif isinstance(obj, (list, tuple)):
        for i, child in enumerate(obj):
            yield from named_tensors(child, f"{prefix}[{i}]")
    # scalars/None inside param containers carry no tensors


def n_params(obj) -> int:
    return sum(t.size for _, t in named_tensors(obj))


# ---------------------------------------------------------------------------
# Initializers


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02, dtype=None) -> Tensor:
    x = rng.standard_normal(shape) * std
    return param(np.clip(x, -2.0 * std, 2.0 * std), dtype=dtype)


def zeros(shape, dtype=None) -> Tensor:
    return param(np.zeros(shape), dtype=dtype)


def ones(shape, dtype=None) -> Tensor:
    return param(np.ones(shape), dtype=dtype)


def linear_init(rng, n_in: int, n_out: int, std: float = 0.02, dtype=None) -> LinearParams:
    return LinearParams(trunc_normal(rng, (n_in, n_out), std, dtype), zeros((n_out,), dtype))


def layer_norm_init(d: int, dtype=None) -> LayerNormParams:
    return LayerNormParams(ones((d,), dtype), zeros((d,), dtype))


def attention_init(rng, d: int, heads: int, dtype=None) -> AttentionParams:
    if d % heads:
        raise ValueError(f"model dim {d} not divisible by {heads} heads")
    mk = lambda: linear_init(rng, d, d, dtype=dtype)
    return AttentionParams(mk(), mk(), mk(), mk(), heads)


def mlp_init(rng, d: int, ratio: int = 4, dtype=None) -> MlpParams:
    return MlpParams(linear_init(rng, d, ratio * d, dtype=dtype),
                     linear_init(rng, ratio * d, d, dtype=dtype))


def conv_init(rng, out_ch: int, in_ch: int, k: int, dtype=None) -> ConvParams:
    # He-style fan-in scaling keeps conv activations O(1) at depth.
    std = math.sqrt(2.0 / (in_ch * k * k))
    w = rng.standard_normal((out_ch, in_ch, k, k)) * std
    return ConvParams(param(w, dtype=dtype), zeros((out_ch,), dtype))


def channel_norm_init(c: int, dtype=None) -> ChannelNormParams:
    return ChannelNormParams(ones((c,), dtype), zeros((c,), dtype))


# ---------------------------------------------------------------------------
# Functional ops


def bias_add(x: Tensor, b: Tensor) -> Tensor:
    shape = (1,) * (x.ndim - 1) + (b.shape[0],)
    return x + b.reshape(shape).broadcast_to(x.shape)


def linear(x: Tensor, p: LinearParams) -> Tensor:
    return bias_add(matmul(x, p.w), p.b)


def layer_norm(x: Tensor, p: LayerNormParams, eps: float = LN_EPS) -> Tensor:
    """Normalize over the last axis, then apply per-channel affine."""
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu.broadcast_to(x.shape)
    var = (xc * xc).mean(axis=-1, keepdims=True)
    sd = (var + eps).sqrt()
    xn = xc / sd.broadcast_to(x.shape)
    shape = (1,) * (x.ndim - 1) + (x.shape[-1],)
    return xn * p.gain.reshape(shape).broadcast_to(x.shape) + p.bias.reshape(shape).broadcast_to(x.shape)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    # The row max is detached: softmax is shift-invariant, so subtracting a
    # constant leaves the gradient exact while keeping exp in range.
    m = const(np.max(x.data, axis=axis, keepdims=True))
    e = (x - m.broadcast_to(x.shape)).exp()
    return e / e.sum(axis=axis, keepdims=True).broadcast_to(x.shape)


def gelu(x: Tensor) -> Tensor:
    """Sigmoid-gated linear unit, the tanh-free gelu approximation."""
    return x * (x * 1.702).sigmoid()


def mlp(x: Tensor, p: MlpParams) -> Tensor:
    return linear(gelu(linear(x, p.fc1)), p.fc2)


def msa(x: Tensor, p: AttentionParams) -> Tensor:
    """Multi-head self-attention over the second-to-last axis.

    Accepts (N, d) or (B, N, d); leading batch dims must be pre-folded.
    """
    squeeze = x.ndim == 2
    if squeeze:
        x = x.reshape(1, *x.shape)
    B, N, d = x.shape
    h = p.heads
    hd = d // h
    scale = 1.0 / math.sqrt(hd)

    def split(t: Tensor) -> Tensor:
        return t.reshape(B, N, h, hd).transpose((0, 2, 1, 3))

    q = split(linear(x, p.q))
    k = split(linear(x, p.k))
    v = split(linear(x, p.v))
    scores = matmul(q, k.transpose((0, 1, 3, 2))) * scale
    ctx = matmul(softmax(scores, axis=-1), v)
    out = linear(ctx.transpose((0, 2, 1, 3)).reshape(B, N, d), p.out)
    return out.reshape(N, d) if squeeze else out


def conv2d(x: Tensor, p: ConvParams, stride: int = 1, pad: int | None = None) -> Tensor:
    """2-d convolution with zero padding; default pad keeps H, W for odd k."""
    out_ch, in_ch, k, _ = p.w.shape
    if pad is None:
        pad = (k - 1) // 2
    B, C, H, W = x.shape
    oh = (H + 2 * pad - k) // stride + 1
    ow = (W + 2 * pad - k) // stride + 1
    cols = apply("im2col", (x,), k=k, stride=stride, pad=pad)  # (B, oh*ow, C*k*k)
    w2 = p.w.reshape(out_ch, in_ch * k * k).transpose((1, 0))
    y = bias_add(matmul(cols, w2), p.b)  # (B, oh*ow, out_ch)
    return y.reshape(B, oh, ow, out_ch).transpose((0, 3, 1, 2))


def channel_norm(x: Tensor, p: ChannelNormParams, eps: float = LN_EPS) -> Tensor:
    """Normalize each sample over all of (C, H, W); per-channel affine.

    A batch-independent stand-in where a running-stat norm would break
    determinism.
    """
    B, C, H, W = x.shape
    mu = x.mean(axis=(1, 2, 3), keepdims=True)
    xc = x - mu.broadcast_to(x.shape)
    var = (xc * xc).mean(axis=(1, 2, 3), keepdims=True)
    xn = xc / (var + eps).sqrt().broadcast_to(x.shape)
    shape = (1, C, 1, 1)
    return xn * p.gain.reshape(shape).broadcast_to(x.shape) + p.bias.reshape(shape).broadcast_to(x.shape)


def global_avg_pool(x: Tensor) -> Tensor:
    """(B, C, H, W) -> (B, C)."""
    return x.mean(axis=(2, 3))
