"""Dense n-d tensors with reverse-mode automatic differentiation.

Values are numpy arrays, float64 by default with float32 available for speed.
Operations execute eagerly; while a `Tape` is active, any op whose inputs
require gradients is recorded, and `Tape.backward` replays the chain rule
over the records in exact reverse execution order.  Gradients accumulate by
summation over fan-out.  Because traversal order is fixed by the recording
order, running backward twice over the same tape yields bit-identical
gradients.

There is no implicit broadcasting anywhere: binary ops demand exactly equal
shapes, and any expansion must go through the explicit `broadcast` op, whose
backward sums over the expanded axes.  This keeps every gradient shape
trivially auditable.

Op forwards/backwards live in a registry keyed by kind so that a gradient
checker can enumerate every registered op; see `gradcheck.py`.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float64


class ShapeMismatch(ValueError):
    """Operand shapes are incompatible for the requested op."""


class NonFinite(ArithmeticError):
    """An op produced NaN or Inf."""


class NotScalar(ValueError):
    """backward() was asked to differentiate a non-scalar value."""


# ---------------------------------------------------------------------------
# Tensor and tape


class Tensor:
    """A numpy array plus a requires-grad flag.

    Tensors are value-like: no op mutates an input array, so ops are free to
    return views (reshape, slice, broadcast) without copying.
    """

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is None:
            # Keep an existing float array's precision; promote everything
            # else (lists, ints) to the default.
            if isinstance(data, np.ndarray) and np.issubdtype(data.dtype, np.floating):
                dtype = data.dtype
            else:
                dtype = DEFAULT_DTYPE
        self.data = np.array(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)

    @classmethod
    def _wrap(cls, array: np.ndarray, requires_grad: bool) -> "Tensor":
        # Internal fast path: adopt the array without copying.
        t = object.__new__(cls)
        t.data = array
        t.requires_grad = requires_grad
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        """Same values, severed from gradient flow."""
        return Tensor._wrap(self.data, False)

    # -- arithmetic; Python scalars go through scale/shift so the op set
    # -- stays closed under exact-shape binary ops
    def __add__(self, other):
        if isinstance(other, Tensor):
            return apply("add", (self, other))
        return apply("shift", (self,), c=float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return apply("sub", (self, other))
        return apply("shift", (self,), c=-float(other))

    def __rsub__(self, other):
        return apply("shift", (apply("scale", (self,), c=-1.0),), c=float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return apply("mul", (self, other))
        return apply("scale", (self,), c=float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return apply("div", (self, other))
        return apply("scale", (self,), c=1.0 / float(other))

    def __neg__(self):
        return apply("scale", (self,), c=-1.0)

    def __matmul__(self, other):
        return apply("matmul", (self, other))

    def __getitem__(self, key):
        if not isinstance(key, tuple):
            key = (key,)
        for k in key:
            if not isinstance(k, (int, slice)) and k is not None:
                raise TypeError("only basic indexing (ints and slices) is supported")
        return apply("slice", (self,), key=key)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return apply("reshape", (self,), shape=tuple(shape))

    def transpose(self, axes: Sequence[int]) -> "Tensor":
        return apply("transpose", (self,), axes=tuple(axes))

    def broadcast_to(self, shape: Sequence[int]) -> "Tensor":
        return apply("broadcast", (self,), shape=tuple(shape))

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return apply("sum", (self,), axis=_norm_axis(axis), keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return apply("mean", (self,), axis=_norm_axis(axis), keepdims=keepdims)

    def exp(self) -> "Tensor":
        return apply("exp", (self,))

    def log(self) -> "Tensor":
        return apply("log", (self,))

    def tanh(self) -> "Tensor":
        return apply("tanh", (self,))

    def relu(self) -> "Tensor":
        return apply("relu", (self,))

    def sqrt(self) -> "Tensor":
        return apply("sqrt", (self,))

    def sigmoid(self) -> "Tensor":
        return apply("sigmoid", (self,))

    def __repr__(self) -> str:
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{grad})"


def const(data, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=False, dtype=dtype)


def param(data, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=True, dtype=dtype)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    return apply("concat", tuple(tensors), axis=axis)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return apply("matmul", (a, b))


@dataclass(slots=True)
class _Record:
    kind: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    attrs: dict


_active_tapes: list["Tape"] = []


class Tape:
    """Records forward ops for one reverse pass.

    Use one tape per training step:

        with Tape() as tape:
            loss = model(...)
        grads = tape.backward(loss)

    `backward` may be called after the `with` block and any number of times;
    each call re-traverses the same records from scratch.
    """

    __slots__ = ("records",)

    def __init__(self):
        self.records: list[_Record] = []

    def __enter__(self) -> "Tape":
        _active_tapes.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _active_tapes.pop()

    def __len__(self) -> int:
        return len(self.records)

    def backward(self, loss: Tensor) -> dict[Tensor, Tensor]:
        """Gradients of scalar `loss` w.r.t. every recorded requires-grad tensor.

        Returns a map keyed by tensor identity; look leaves up directly.
        """
        if loss.data.size != 1:
            raise NotScalar(f"backward needs a scalar, got shape {loss.shape}")
        grads: dict[Tensor, np.ndarray] = {loss: np.ones_like(loss.data)}
        owned: set[int] = set()
        for rec in reversed(self.records):
            g = grads.get(rec.output)
            if g is None:
                continue
            op = OPS[rec.kind]
            arrays = tuple(t.data for t in rec.inputs)
            if op.backward_partial is not None and not all(t.requires_grad for t in rec.inputs):
                needs = tuple(t.requires_grad for t in rec.inputs)
                in_grads = op.backward_partial(g, rec.output.data, needs, *arrays, **rec.attrs)
            else:
                in_grads = op.backward(g, rec.output.data, *arrays, **rec.attrs)
            for t, gi in zip(rec.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                acc = grads.get(t)
                if acc is None:
                    grads[t] = gi
                elif id(t) in owned:
                    acc += gi  # in-place safe: we allocated acc ourselves
                else:
                    grads[t] = acc + gi
                    owned.add(id(t))
        return {t: Tensor._wrap(g, False) for t, g in grads.items()}


# ---------------------------------------------------------------------------
# Op registry


@dataclass(frozen=True, slots=True)
class OpDef:
    forward: Callable[..., np.ndarray]
    backward: Callable[..., tuple]
    check_finite: bool = True
    # Optional (g, y, needs, *inputs, **attrs) variant that may return None
    # for inputs with needs[i] False, skipping their (possibly large) products.
    backward_partial: Callable[..., tuple] | None = None


OPS: dict[str, OpDef] = {}

# Pure data-movement ops cannot create non-finite values from finite inputs,
# so their (often large) outputs skip the finiteness scan.
_MOVEMENT = {"reshape", "transpose", "slice", "concat", "broadcast", "im2col"}


def register(kind: str, forward, backward, partial=None) -> None:
    if kind in OPS:
        raise ValueError(f"op kind {kind!r} already registered")
    OPS[kind] = OpDef(forward, backward, check_finite=kind not in _MOVEMENT, backward_partial=partial)


_scan_enabled = True


@contextlib.contextmanager
def finite_checks(enabled: bool):
    """Toggle the per-op finiteness scan (on by default).

    Training loops may turn the scan off for speed and instead test the loss
    scalar each step: every op here propagates NaN/Inf forward, so a bad
    intermediate is still caught, just one step later.
    """
    global _scan_enabled
    prev = _scan_enabled
    _scan_enabled = bool(enabled)
    try:
        yield
    finally:
        _scan_enabled = prev


def apply(kind: str, inputs: tuple[Tensor, ...], **attrs) -> Tensor:
    op = OPS[kind]
    arrays = tuple(t.data for t in inputs)
    if len(arrays) > 1:
        d0 = arrays[0].dtype
        for a in arrays[1:]:
            if a.dtype != d0:
                raise ValueError(f"{kind}: mixed dtypes {d0} and {a.dtype}")
    # NonFinite is the error surface here; numpy's own warnings are noise.
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        out = op.forward(*arrays, **attrs)
    if op.check_finite and _scan_enabled:
        _assert_finite(out, kind)
    result = Tensor._wrap(out, any(t.requires_grad for t in inputs))
    if _active_tapes and result.requires_grad:
        _active_tapes[-1].records.append(_Record(kind, inputs, result, attrs))
    return result


def _assert_finite(arr: np.ndarray, kind: str) -> None:
    # Cheap screen first: a single sum propagates NaN/Inf.  Only on failure
    # do a full scan, since a finite overflow of the sum is not an error.
    s = float(np.sum(arr))
    if not math.isfinite(s) and not np.isfinite(arr).all():
        raise NonFinite(f"op {kind!r} produced non-finite values")


def _norm_axis(axis):
    if axis is None or isinstance(axis, int):
        return axis
    return tuple(axis)


def _same_shape(kind: str, a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeMismatch(f"{kind}: shapes {a.shape} and {b.shape} differ")


# -- elementwise binary


def _add_fw(a, b):
    _same_shape("add", a, b)
    return a + b


def _sub_fw(a, b):
    _same_shape("sub", a, b)
    return a - b


def _mul_fw(a, b):
    _same_shape("mul", a, b)
    return a * b


def _div_fw(a, b):
    _same_shape("div", a, b)
    return a / b


register("add", _add_fw, lambda g, y, a, b: (g, g))
register("sub", _sub_fw, lambda g, y, a, b: (g, -g))
register(
    "mul",
    _mul_fw,
    lambda g, y, a, b: (g * b, g * a),
    partial=lambda g, y, needs, a, b: (g * b if needs[0] else None, g * a if needs[1] else None),
)
register(
    "div",
    _div_fw,
    lambda g, y, a, b: (g / b, -g * a / (b * b)),
    partial=lambda g, y, needs, a, b: (
        g / b if needs[0] else None,
        -g * a / (b * b) if needs[1] else None,
    ),
)


# -- elementwise unary

register("tanh", lambda a: np.tanh(a), lambda g, y, a: (g * (1.0 - y * y),))
register("exp", lambda a: np.exp(a), lambda g, y, a: (g * y,))
register("log", lambda a: np.log(a), lambda g, y, a: (g / a,))
# Subgradient 0 at the kink, matching the mask construction downstream.
register(
    "relu",
    lambda a: np.maximum(a, 0.0),
    lambda g, y, a: (g * (a > 0.0).astype(a.dtype),),
)
register("sqrt", lambda a: np.sqrt(a), lambda g, y, a: (g * (0.5 / y),))


def _sigmoid_fw(a):
    # exp only ever sees -|a|, so no overflow; both branches share one exp.
    e = np.exp(-np.abs(a))
    return np.where(a >= 0, 1.0, e) / (1.0 + e)


register("sigmoid", _sigmoid_fw, lambda g, y, a: (g * y * (1.0 - y),))
register("scale", lambda a, c: a * c, lambda g, y, a, c: (g * c,))
register("shift", lambda a, c: a + c, lambda g, y, a, c: (g,))


# -- matmul: (..., n, k) @ (k, m), or (..., n, k) @ (..., k, m) with equal
# -- leading dims


def _matmul_fw(a, b):
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatch(f"matmul: operands must be at least 2-d, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    if b.ndim != 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeMismatch(f"matmul: leading dims differ, {a.shape} @ {b.shape}")
    return np.matmul(a, b)


def _matmul_bw(g, y, a, b):
    return _matmul_bw_partial(g, y, (True, True), a, b)


def _matmul_bw_partial(g, y, needs, a, b):
    if b.ndim == 2:
        ga = np.matmul(g, b.T) if needs[0] else None
        if needs[1]:
            k, m = b.shape
            gb = np.matmul(a.reshape(-1, k).T, g.reshape(-1, m))
        else:
            gb = None
    else:
        ga = np.matmul(g, np.swapaxes(b, -1, -2)) if needs[0] else None
        gb = np.matmul(np.swapaxes(a, -1, -2), g) if needs[1] else None
    return (ga, gb)


register("matmul", _matmul_fw, _matmul_bw, partial=_matmul_bw_partial)


# -- shape movement


def _concat_fw(*arrays, axis):
    base = arrays[0].shape
    for a in arrays[1:]:
        if len(a.shape) != len(base) or a.shape[:axis] != base[:axis] or a.shape[axis + 1 :] != base[axis + 1 :]:
            raise ShapeMismatch(f"concat: shapes {[x.shape for x in arrays]} differ off axis {axis}")
    return np.concatenate(arrays, axis=axis)


def _concat_bw(g, y, *arrays, axis):
    sizes = [a.shape[axis] for a in arrays]
    splits = np.cumsum(sizes)[:-1]
    return tuple(np.split(g, splits, axis=axis))


register("concat", _concat_fw, _concat_bw)


def _slice_bw(g, y, a, key):
    z = np.zeros_like(a)
    z[key] = g
    return (z,)


register("slice", lambda a, key: a[key], _slice_bw)
register(
    "reshape",
    lambda a, shape: a.reshape(shape),
    lambda g, y, a, shape: (g.reshape(a.shape),),
)


def _transpose_bw(g, y, a, axes):
    inv = np.argsort(axes)
    return (np.transpose(g, inv),)


register("transpose", lambda a, axes: np.transpose(a, axes), _transpose_bw)


def _broadcast_fw(a, shape):
    try:
        return np.broadcast_to(a, shape)
    except ValueError as e:
        raise ShapeMismatch(f"broadcast: {a.shape} -> {shape}: {e}") from None


def _broadcast_bw(g, y, a, shape):
    extra = g.ndim - a.ndim
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    keep = tuple(i for i, (ga, aa) in enumerate(zip(g.shape, a.shape)) if ga != aa)
    if keep:
        g = g.sum(axis=keep, keepdims=True)
    return (g,)


register("broadcast", _broadcast_fw, _broadcast_bw)


# -- reductions


def _expand_like(g, a, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, a.shape)
    if not keepdims:
        axes = (axis,) if isinstance(axis, int) else axis
        axes = tuple(ax % a.ndim for ax in axes)
        shape = tuple(1 if i in axes else s for i, s in enumerate(a.shape))
        g = g.reshape(shape)
    return np.broadcast_to(g, a.shape)


def _sum_bw(g, y, a, axis, keepdims):
    return (_expand_like(g, a, axis, keepdims),)


def _mean_bw(g, y, a, axis, keepdims):
    count = a.size if axis is None else np.prod(
        [a.shape[ax % a.ndim] for ax in ((axis,) if isinstance(axis, int) else axis)]
    )
    return (_expand_like(g, a, axis, keepdims) / count,)


register("sum", lambda a, axis, keepdims: np.sum(a, axis=axis, keepdims=keepdims), _sum_bw)
register("mean", lambda a, axis, keepdims: np.mean(a, axis=axis, keepdims=keepdims), _mean_bw)


# -- im2col: the workhorse behind conv2d.  (B, C, H, W) -> (B, oh*ow, C*k*k)
# -- with zero padding.  Backward scatters patches back with overlap adds.


def _im2col_fw(a, k, stride, pad):
    if a.ndim != 4:
        raise ShapeMismatch(f"im2col: need (B, C, H, W), got {a.shape}")
    B, C, H, W = a.shape
    oh = (H + 2 * pad - k) // stride + 1
    ow = (W + 2 * pad - k) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeMismatch(f"im2col: kernel {k} does not fit {a.shape} with pad {pad}")
    ap = np.pad(a, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else a
    # (B, C, oh', ow', k, k) window view; one gather copy at the reshape.
    win = np.lib.stride_tricks.sliding_window_view(ap, (k, k), axis=(2, 3))
    if stride != 1:
        win = win[:, :, ::stride, ::stride]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(B, oh * ow, C * k * k)


def _im2col_bw(g, y, a, k, stride, pad):
    B, C, H, W = a.shape
    oh = (H + 2 * pad - k) // stride + 1
    ow = (W + 2 * pad - k) // stride + 1
    g6 = g.reshape(B, oh, ow, C, k, k)
    gp = np.zeros((B, C, H + 2 * pad, W + 2 * pad), dtype=a.dtype)
    for ki in range(k):
        for kj in range(k):
            gp[:, :, ki : ki + stride * oh : stride, kj : kj + stride * ow : stride] += \
                g6[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
    if pad:
        gp = gp[:, :, pad : pad + H, pad : pad + W]
    return (gp,)


register("im2col", _im2col_fw, _im2col_bw)
