"""Layer primitives: convolutions, batch norm, pooling, classifier head.

Every forward has a matching backward, written against the same cached
values, and every convolution variant is checked against the naive
reference in p3d.reference.  Convolutions are cross-correlations (no
kernel flip) with zero padding and no bias, the usual deep-learning
convention.  All kernels follow the dtype of their inputs: float32 in
production, float64 when the gradient checker drives them.

The general convolution is lowered to one GEMM per kernel tap
(loop-reordered im2col): for each (dt, dy, dx) offset a strided slice of
the padded input is contracted with the matching (out_ch, in_ch) weight
plane.  Reduction order is fixed, so results are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, SpecError


@dataclass(frozen=True)
class KernelSpec:
    """Convolution geometry: temporal depth d, spatial size k, channels,
    strides and paddings for the time and space axes."""

    d: int
    k: int
    in_ch: int
    out_ch: int
    stride_t: int = 1
    stride_s: int = 1
    pad_t: int = 0
    pad_s: int = 0

    def __post_init__(self):
        if self.d < 1 or self.k < 1:
            raise SpecError(f"kernel extents must be >= 1: d={self.d} k={self.k}")
        if self.in_ch < 1 or self.out_ch < 1:
            raise SpecError("channel counts must be >= 1")
        if self.stride_t < 1 or self.stride_s < 1:
            raise SpecError("strides must be positive")
        if self.pad_t < 0 or self.pad_s < 0:
            raise SpecError("paddings must be non-negative")

    @classmethod
    def same(cls, d, k, in_ch, out_ch, stride_t=1, stride_s=1):
        """Same-padding spec; d and k must be odd."""
        if d % 2 == 0 or k % 2 == 0:
            raise SpecError(f"same padding needs odd kernel extents, got d={d} k={k}")
        return cls(d, k, in_ch, out_ch, stride_t, stride_s,
                   pad_t=(d - 1) // 2, pad_s=(k - 1) // 2)

    def out_extents(self, t: int, h: int, w: int):
        """(T', H', W') for an input of extents (t, h, w)."""
        to = (t + 2 * self.pad_t - self.d) // self.stride_t + 1
        ho = (h + 2 * self.pad_s - self.k) // self.stride_s + 1
        wo = (w + 2 * self.pad_s - self.k) // self.stride_s + 1
        if to < 1 or ho < 1 or wo < 1:
            raise ShapeError(
                f"kernel {self.d}x{self.k}x{self.k} does not fit input "
                f"extents ({t},{h},{w}) -> ({to},{ho},{wo})")
        return to, ho, wo

    @property
    def weight_shape(self):
        return (self.out_ch, self.in_ch, self.d, self.k, self.k)


def check_weights(w: np.ndarray, spec: KernelSpec) -> None:
    if tuple(w.shape) != spec.weight_shape:
        raise ShapeError(
            f"weights {tuple(w.shape)} do not match spec {spec.weight_shape}")


def _check_conv(x: np.ndarray, w: np.ndarray, spec: KernelSpec):
    if x.ndim != 5:
        raise ShapeError(f"conv input must be 5-D, got {x.shape}")
    check_weights(w, spec)
    if x.shape[1] != spec.in_ch:
        raise ShapeError(
            f"input has {x.shape[1]} channels, spec expects {spec.in_ch}")
    return spec.out_extents(x.shape[2], x.shape[3], x.shape[4])


def _pad(x: np.ndarray, spec: KernelSpec) -> np.ndarray:
    if spec.pad_t == 0 and spec.pad_s == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (spec.pad_t, spec.pad_t),
                      (spec.pad_s, spec.pad_s), (spec.pad_s, spec.pad_s)))


def _tap_slices(spec, dt, dy, dx, to, ho, wo):
    return (slice(dt, dt + spec.stride_t * to, spec.stride_t),
            slice(dy, dy + spec.stride_s * ho, spec.stride_s),
            slice(dx, dx + spec.stride_s * wo, spec.stride_s))


def conv3d(x: np.ndarray, w: np.ndarray, spec: KernelSpec) -> np.ndarray:
    """Optimized d x k x k convolution, one GEMM per kernel tap."""
    to, ho, wo = _check_conv(x, w, spec)
    n = x.shape[0]
    xp = _pad(x, spec)
    w = w.astype(x.dtype, copy=False)
    out = np.zeros((spec.out_ch, n, to, ho, wo), dtype=x.dtype)
    for dt in range(spec.d):
        for dy in range(spec.k):
            for dx in range(spec.k):
                st, sh, sw = _tap_slices(spec, dt, dy, dx, to, ho, wo)
                out += np.tensordot(w[:, :, dt, dy, dx],
                                    xp[:, :, st, sh, sw], axes=([1], [1]))
    return np.ascontiguousarray(np.moveaxis(out, 0, 1))


def conv3d_backward(x: np.ndarray, w: np.ndarray, spec: KernelSpec,
                    upstream: np.ndarray, need_input_grad: bool = True):
    """Gradients (d_input, d_weights) of conv3d under `upstream`.

    need_input_grad=False skips the input gradient (first layers), which
    is the expensive half of the pass.
    """
    to, ho, wo = _check_conv(x, w, spec)
    if upstream.shape != (x.shape[0], spec.out_ch, to, ho, wo):
        raise ShapeError(
            f"upstream shape {upstream.shape} does not match conv output "
            f"{(x.shape[0], spec.out_ch, to, ho, wo)}")
    xp = _pad(x, spec)
    w = w.astype(x.dtype, copy=False)
    upstream = upstream.astype(x.dtype, copy=False)
    gw = np.empty_like(w)
    gxp = np.zeros_like(xp) if need_input_grad else None
    for dt in range(spec.d):
        for dy in range(spec.k):
            for dx in range(spec.k):
                st, sh, sw = _tap_slices(spec, dt, dy, dx, to, ho, wo)
                patch = xp[:, :, st, sh, sw]
                gw[:, :, dt, dy, dx] = np.tensordot(
                    upstream, patch, axes=([0, 2, 3, 4], [0, 2, 3, 4]))
                if gxp is None:
                    continue
                gpatch = np.tensordot(w[:, :, dt, dy, dx], upstream,
                                      axes=([0], [1]))
                gxp[:, :, st, sh, sw] += np.moveaxis(gpatch, 0, 1)
    if gxp is None:
        return None, gw
    if spec.pad_t or spec.pad_s:
        t, h, wd = x.shape[2:]
        gx = gxp[:, :, spec.pad_t:spec.pad_t + t,
                 spec.pad_s:spec.pad_s + h, spec.pad_s:spec.pad_s + wd]
        gx = np.ascontiguousarray(gx)
    else:
        gx = gxp
    return gx, gw


def conv_spatial(x, w, spec: KernelSpec):
    """1 x k x k convolution applied independently to every frame."""
    if spec.d != 1 or spec.pad_t != 0 or spec.stride_t != 1:
        raise SpecError(
            f"spatial conv requires d=1, pad_t=0, stride_t=1, got {spec}")
    return conv3d(x, w, spec)


def conv_spatial_backward(x, w, spec: KernelSpec, upstream,
                  need_input_grad: bool = True):
    if spec.d != 1 or spec.pad_t != 0 or spec.stride_t != 1:
        raise SpecError(
            f"spatial conv requires d=1, pad_t=0, stride_t=1, got {spec}")
    return conv3d_backward(x, w, spec, upstream, need_input_grad)


def conv_temporal(x, w, spec: KernelSpec):
    """d x 1 x 1 convolution along time at every spatial location."""
    if spec.k != 1 or spec.pad_s != 0 or spec.stride_s != 1:
        raise SpecError(
            f"temporal conv requires k=1, pad_s=0, stride_s=1, got {spec}")
    return conv3d(x, w, spec)


def conv_temporal_backward(x, w, spec: KernelSpec, upstream,
                  need_input_grad: bool = True):
    if spec.k != 1 or spec.pad_s != 0 or spec.stride_s != 1:
        raise SpecError(
            f"temporal conv requires k=1, pad_s=0, stride_s=1, got {spec}")
    return conv3d_backward(x, w, spec, upstream, need_input_grad)


def conv_pointwise(x, w, spec: KernelSpec):
    """1 x 1 x 1 convolution: a linear map across channels per position."""
    if spec.d != 1 or spec.k != 1 or spec.pad_t != 0 or spec.pad_s != 0:
        raise SpecError(f"pointwise conv requires d=k=1 and no padding, got {spec}")
    return conv3d(x, w, spec)


def conv_pointwise_backward(x, w, spec: KernelSpec, upstream,
                  need_input_grad: bool = True):
    if spec.d != 1 or spec.k != 1 or spec.pad_t != 0 or spec.pad_s != 0:
        raise SpecError(f"pointwise conv requires d=k=1 and no padding, got {spec}")
    return conv3d_backward(x, w, spec, upstream, need_input_grad)


# ---------------------------------------------------------------------------
# batch normalization

_BN_AXES = (0, 2, 3, 4)


@dataclass
class BatchNormState:
    """Running statistics, updated by train-mode forward passes."""

    mean: np.ndarray
    var: np.ndarray

    @classmethod
    def fresh(cls, channels: int):
        return cls(np.zeros(channels, np.float32), np.ones(channels, np.float32))


def _bn_shape(v, x):
    return v.reshape(1, -1, *([1] * (x.ndim - 2)))


def batch_norm(x, gamma, beta, mode: str, state: BatchNormState,
               eps: float = 1e-5, momentum: float = 0.9):
    """Per-channel normalization over (N,T,H,W).

    Returns (y, cache); cache is None in inference mode.  Train mode uses
    batch statistics (biased variance) and folds them into `state` as
    running = momentum * running + (1-momentum) * batch.
    """
    if eps <= 0:
        raise SpecError(f"batch norm eps must be positive, got {eps}")
    if gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError(
            f"gamma/beta must have length {x.shape[1]}, got "
            f"{gamma.shape}/{beta.shape}")
    if mode == "train":
        mu = x.mean(axis=_BN_AXES)
        var = x.var(axis=_BN_AXES)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x - _bn_shape(mu, x)) * _bn_shape(inv_std, x)
        y = _bn_shape(gamma, x) * xhat + _bn_shape(beta, x)
        state.mean = (momentum * state.mean + (1 - momentum) * mu).astype(
            state.mean.dtype)
        state.var = (momentum * state.var + (1 - momentum) * var).astype(
            state.var.dtype)
        return y, (xhat, gamma.astype(x.dtype), inv_std.astype(x.dtype))
    if mode == "inference":
        inv_std = 1.0 / np.sqrt(state.var.astype(x.dtype) + eps)
        y = (_bn_shape(gamma.astype(x.dtype) * inv_std, x)
             * (x - _bn_shape(state.mean.astype(x.dtype), x))
             + _bn_shape(beta.astype(x.dtype), x))
        return y, None
    raise SpecError(f"unknown batch norm mode {mode!r}")


def batch_norm_backward(cache, upstream):
    """Gradients (d_input, d_gamma, d_beta) for a train-mode forward."""
    xhat, gamma, inv_std = cache
    dgamma = (upstream * xhat).sum(axis=_BN_AXES)
    dbeta = upstream.sum(axis=_BN_AXES)
    m = upstream.size // upstream.shape[1]
    g = upstream * _bn_shape(gamma, upstream)
    gx = _bn_shape(inv_std, upstream) * (
        g - _bn_shape(g.sum(axis=_BN_AXES) / m, upstream)
        - xhat * _bn_shape((g * xhat).sum(axis=_BN_AXES) / m, upstream))
    return gx, dgamma, dbeta


# ---------------------------------------------------------------------------
# pooling

def max_pool_spatial(x, window: int, stride: int, pad: int = 0):
    """Per-frame spatial max pooling; returns (y, cache) for backward."""
    n, c, t, h, w = x.shape
    if window > h + 2 * pad or window > w + 2 * pad:
        raise ShapeError(
            f"pool window {window} larger than padded input ({h},{w})+{pad}")
    ho = (h + 2 * pad - window) // stride + 1
    wo = (w + 2 * pad - window) // stride + 1
    if pad:
        fill = np.finfo(x.dtype).min
        xp = np.pad(x, ((0, 0), (0, 0), (0, 0), (pad, pad), (pad, pad)),
                    constant_values=fill)
    else:
        xp = x
    win = np.lib.stride_tricks.sliding_window_view(xp, (window, window),
                                                   axis=(3, 4))
    win = win[:, :, :, ::stride, ::stride][:, :, :, :ho, :wo]
    flat = win.reshape(n, c, t, ho, wo, window * window)
    idx = flat.argmax(axis=-1)
    y = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    cache = (x.shape, x.dtype, window, stride, pad, idx)
    return np.ascontiguousarray(y), cache


def max_pool_spatial_backward(cache, upstream):
    """Routes gradient to each window's argmax."""
    (n, c, t, h, w), dtype, window, stride, pad, idx = cache
    hp, wp = h + 2 * pad, w + 2 * pad
    ho, wo = idx.shape[3], idx.shape[4]
    dy, dx = np.divmod(idx, window)
    habs = np.arange(ho).reshape(1, 1, 1, ho, 1) * stride + dy
    wabs = np.arange(wo).reshape(1, 1, 1, 1, wo) * stride + dx
    nn = np.arange(n).reshape(n, 1, 1, 1, 1)
    cc = np.arange(c).reshape(1, c, 1, 1, 1)
    tt = np.arange(t).reshape(1, 1, t, 1, 1)
    lin = ((((nn * c + cc) * t + tt) * hp + habs) * wp + wabs)
    lin, up = np.broadcast_arrays(lin, upstream)
    flatgrad = np.bincount(lin.ravel(), weights=up.ravel().astype(np.float64),
                           minlength=n * c * t * hp * wp)
    gxp = flatgrad.reshape(n, c, t, hp, wp).astype(dtype)
    if pad:
        return np.ascontiguousarray(gxp[:, :, :, pad:pad + h, pad:pad + w])
    return gxp


def global_avg_pool(x):
    """Mean over (T,H,W): the pool5 feature map, shape (N, C).

    Accumulates in float64 (up to ~400k positions per channel at full
    geometry; float32 accumulation would lose several digits).
    """
    return x.mean(axis=(2, 3, 4), dtype=np.float64).astype(x.dtype)


def global_avg_pool_backward(x_shape, upstream):
    n, c, t, h, w = x_shape
    scale = 1.0 / (t * h * w)
    return np.broadcast_to(
        (upstream * scale)[:, :, None, None, None], x_shape).astype(
            upstream.dtype).copy()


# ---------------------------------------------------------------------------
# classifier head

def fully_connected(x, weight, bias):
    """(N,C) @ (C,K) + (K,) -> (N,K)."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeError(
            f"fc shapes do not agree: x {x.shape}, W {weight.shape}")
    if bias.shape != (weight.shape[1],):
        raise ShapeError(f"fc bias shape {bias.shape} != ({weight.shape[1]},)")
    return x @ weight.astype(x.dtype, copy=False) + bias.astype(x.dtype, copy=False)


def fully_connected_backward(x, weight, upstream):
    gx = upstream @ weight.T.astype(upstream.dtype, copy=False)
    gw = x.T @ upstream
    gb = upstream.sum(axis=0)
    return gx, gw, gb


def softmax_cross_entropy(logits, labels):
    """Mean negative log-likelihood and its gradient (softmax-onehot)/N."""
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} != ({n},)")
    if labels.min() < 0 or labels.max() >= k:
        raise ShapeError(f"labels must lie in [0, {k})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    loss = float(-np.mean(
        shifted[np.arange(n), labels] - np.log(exp.sum(axis=1))))
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return loss, grad.astype(logits.dtype)


def dropout(x, rate: float, stream):
    """Inverted dropout; identity when rate == 0 (no stream draw)."""
    if not 0.0 <= rate < 1.0:
        raise SpecError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return x, None
    keep = (stream.uniform(x.shape, 0.0, 1.0, dtype=np.float64) >= rate)
    mask = keep.astype(x.dtype) / (1.0 - rate)
    return x * mask, mask


def dropout_backward(mask, upstream):
    return upstream if mask is None else upstream * mask
