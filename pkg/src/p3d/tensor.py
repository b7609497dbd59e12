"""Dense 5-D clip tensors and the elementwise operations built on them.

A clip tensor is a contiguous numpy array of 32-bit reals laid out
(batch, channel, time, height, width) with width fastest — numpy's row
major order.  All kernels in this package assume that layout.  Functions
here are pure: inputs are never mutated, so values can be shared freely
across threads.
"""

from __future__ import annotations

import numpy as np

from . import rng
from .errors import ShapeError

DTYPE = np.float32


def _check_shape(shape) -> tuple:
    shape = tuple(int(s) for s in shape)
    if len(shape) != 5:
        raise ShapeError(f"clip tensors are 5-D (N,C,T,H,W), got {shape}")
    if any(s < 1 for s in shape):
        raise ShapeError(f"all extents must be >= 1, got {shape}")
    return shape


def tensor_new(shape, fill="zeros", value: float = 0.0,
               lo: float = 0.0, hi: float = 1.0, seed: int = 0) -> np.ndarray:
    """Allocate an (N,C,T,H,W) tensor.

    fill is one of "zeros", "constant" (uses `value`), or "uniform"
    (uses `lo`, `hi`, `seed`; reproducible across runs and platforms,
    see rng module docs).
    """
    shape = _check_shape(shape)
    if fill == "zeros":
        return np.zeros(shape, dtype=DTYPE)
    if fill == "constant":
        return np.full(shape, value, dtype=DTYPE)
    if fill == "uniform":
        return rng.uniform(shape, lo, hi, seed)
    raise ValueError(f"unknown fill rule {fill!r}")


def as_clip_batch(x, name: str = "input") -> np.ndarray:
    """Validate an array as a batch of clips; returns it C-contiguous."""
    x = np.asarray(x)
    if x.ndim != 5:
        raise ShapeError(f"{name} must be 5-D (N,C,T,H,W), got ndim={x.ndim}")
    if any(s < 1 for s in x.shape):
        raise ShapeError(f"{name} has empty extents {x.shape}")
    if x.dtype not in (np.float32, np.float64):
        x = x.astype(DTYPE)
    return np.ascontiguousarray(x)


def tensor_add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise sum; the residual-shortcut addition."""
    if a.shape != b.shape:
        raise ShapeError(f"add shape mismatch: {a.shape} vs {b.shape}")
    return a + b


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Pass upstream gradient where x > 0, zero elsewhere."""
    if x.shape != upstream.shape:
        raise ShapeError(
            f"relu_backward shape mismatch: {x.shape} vs {upstream.shape}")
    return upstream * (x > 0)


def almost_equal(a: np.ndarray, b: np.ndarray, tol: float):
    """(max |a-b| <= tol, max |a-b|); shapes must agree exactly."""
    if a.shape != b.shape:
        raise ShapeError(f"compare shape mismatch: {a.shape} vs {b.shape}")
    diff = float(np.max(np.abs(np.asarray(a, dtype=np.float64) -
                               np.asarray(b, dtype=np.float64))))
    return diff <= tol, diff
