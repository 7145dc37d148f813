"""Implicit learnable alignment for video recognition, from the autodiff
tape up through training, evaluation, and cost/transport diagnostics."""

from .tensor import (
    DEFAULT_DTYPE,
    NonFinite,
    NotScalar,
    ShapeMismatch,
    Tape,
    Tensor,
    concat,
    const,
    matmul,
    param,
)

__all__ = [
    "DEFAULT_DTYPE",
    "NonFinite",
    "NotScalar",
    "ShapeMismatch",
    "Tape",
    "Tensor",
    "concat",
    "const",
    "matmul",
    "param",
]
