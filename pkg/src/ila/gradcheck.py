"""Finite-difference verification of analytic gradients.

Two levels:

* `check_op` perturbs every input coordinate of a single op with central
  differences and compares against the tape gradient under a random
  cotangent.
* `check_function` probes a whole computation (any params -> scalar) along a
  random unit direction, which keeps end-to-end checks affordable.

`OP_SAMPLES` holds a representative input set for every registered op kind;
`run_op_suite` walks it and is shared by the test suite and the CLI.
Samples for kinked ops (relu) keep inputs away from the kink so the
difference quotient is valid.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .tensor import OPS, Tape, Tensor, apply, param


def _rel_err(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(float(np.abs(a).max(initial=0.0)), float(np.abs(b).max(initial=0.0)), 1e-10)
    return float(np.abs(a - b).max(initial=0.0)) / denom


def check_op(kind: str, arrays: list[np.ndarray], attrs: dict, rng: np.random.Generator,
             eps: float = 1e-5) -> float:
    """Max relative error between tape and central-difference gradients."""
    inputs = [param(a) for a in arrays]
    with Tape() as tape:
        out = apply(kind, tuple(inputs), **attrs)
    cot = rng.standard_normal(out.shape)
    with Tape() as tape:
        out = apply(kind, tuple(inputs), **attrs)
        scalar = (out * Tensor(cot)).sum()
    grads = tape.backward(scalar)

    worst = 0.0
    for idx, t in enumerate(inputs):
        fd = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        fd_flat = fd.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(np.sum(apply(kind, tuple(inputs), **attrs).data * cot))
            flat[i] = orig - eps
            lo = float(np.sum(apply(kind, tuple(inputs), **attrs).data * cot))
            flat[i] = orig
            fd_flat[i] = (hi - lo) / (2.0 * eps)
        got = grads[t].data if t in grads else np.zeros_like(t.data)
        worst = max(worst, _rel_err(np.asarray(got, dtype=float), fd))
    return worst


def check_function(fn: Callable[[], Tensor], leaves: list[Tensor],
                   rng: np.random.Generator, eps: float = 1e-5) -> float:
    """Directional-derivative check of a scalar-valued computation.

    `fn` must recompute the scalar from the current leaf values on each call.
    Returns the relative error between the tape directional derivative g.u
    and the central difference along a random unit direction u.
    """
    with Tape() as tape:
        loss = fn()
    grads = tape.backward(loss)

    units = []
    total = 0.0
    for t in leaves:
        u = rng.standard_normal(t.shape)
        units.append(u)
        total += float(np.sum(u * u))
    scale = 1.0 / np.sqrt(total)

    analytic = 0.0
    for t, u in zip(leaves, units):
        g = grads.get(t)
        if g is not None:
            analytic += float(np.sum(g.data * u)) * scale

    saved = [t.data.copy() for t in leaves]

    def _move(sign: float) -> float:
        for t, u, s in zip(leaves, units, saved):
            t.data = s + sign * eps * scale * u
        return float(fn().item())

    hi = _move(+1.0)
    lo = _move(-1.0)
    for t, s in zip(leaves, saved):
        t.data = s
    fd = (hi - lo) / (2.0 * eps)
    return _rel_err(np.array([analytic]), np.array([fd]))


def _away_from_kink(rng: np.random.Generator, shape, margin: float = 0.1) -> np.ndarray:
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, x + np.sign(x + 0.5) * margin, x)


def op_samples(seed: int = 0) -> dict[str, list[tuple[list[np.ndarray], dict]]]:
    rng = np.random.default_rng(seed)

    def n(*shape):
        return rng.standard_normal(shape)

    def pos(*shape):
        return rng.uniform(0.5, 2.0, shape)

    return {
        "add": [([n(3, 4), n(3, 4)], {})],
        "sub": [([n(3, 4), n(3, 4)], {})],
        "mul": [([n(3, 4), n(3, 4)], {})],
        "div": [([n(3, 4), pos(3, 4)], {})],
        "matmul": [
            ([n(3, 4), n(4, 5)], {}),
            ([n(2, 3, 4), n(4, 5)], {}),
            ([n(2, 3, 4), n(2, 4, 5)], {}),
        ],
        "tanh": [([n(3, 4)], {})],
        "exp": [([n(3, 4) * 0.5], {})],
        "log": [([pos(3, 4)], {})],
        "relu": [([_away_from_kink(rng, (3, 4))], {})],
        "sqrt": [([pos(3, 4)], {})],
        "sigmoid": [([n(3, 4) * 2.0], {})],
        "scale": [([n(3, 4)], {"c": -1.7})],
        "shift": [([n(3, 4)], {"c": 0.9})],
        "concat": [([n(2, 3), n(2, 5)], {"axis": 1})],
        "slice": [([n(4, 5)], {"key": (slice(1, 3), slice(0, 5, 2))}),
                  ([n(4, 5)], {"key": (2,)})],
        "reshape": [([n(3, 4)], {"shape": (2, 6)})],
        "transpose": [([n(2, 3, 4)], {"axes": (2, 0, 1)})],
        "broadcast": [([n(3, 1)], {"shape": (2, 3, 4)})],
        "sum": [([n(2, 3, 4)], {"axis": (0, 2), "keepdims": False}),
                ([n(3, 4)], {"axis": None, "keepdims": False}),
                ([n(3, 4)], {"axis": 1, "keepdims": True})],
        "mean": [([n(2, 3, 4)], {"axis": 1, "keepdims": False}),
                 ([n(3, 4)], {"axis": None, "keepdims": False})],
        "im2col": [([n(2, 3, 5, 5)], {"k": 3, "stride": 1, "pad": 1}),
                   ([n(1, 2, 6, 6)], {"k": 2, "stride": 2, "pad": 0})],
    }


@dataclass(frozen=True)
class OpCheckResult:
    kind: str
    max_rel_err: float
    ok: bool


def run_op_suite(seed: int = 0, tol: float = 1e-4) -> list[OpCheckResult]:
    """Finite-difference check every registered op; the op registry and the
    sample table must cover each other exactly."""
    samples = op_samples(seed)
    missing = set(OPS) - set(samples)
    extra = set(samples) - set(OPS)
    if missing or extra:
        raise AssertionError(f"op sample coverage mismatch: missing={missing} extra={extra}")
    rng = np.random.default_rng(seed + 1)
    results = []
    for kind in sorted(OPS):
        worst = 0.0
        for arrays, attrs in samples[kind]:
            worst = max(worst, check_op(kind, [a.copy() for a in arrays], attrs, rng))
        results.append(OpCheckResult(kind, worst, worst < tol))
    return results
