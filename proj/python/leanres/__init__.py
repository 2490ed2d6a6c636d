"""Lean residual network kernels, counters and the invariant suite."""

from ._core import (
    count_flops,
    count_params,
    dense_conv2d,
    layer_flops,
    lean_conv2d,
    lean_to_dense,
    lr_at_epoch,
    synthetic_quadrants,
    verify,
)

__all__ = [
    "count_flops",
    "count_params",
    "dense_conv2d",
    "layer_flops",
    "lean_conv2d",
    "lean_to_dense",
    "lr_at_epoch",
    "synthetic_quadrants",
    "verify",
]
