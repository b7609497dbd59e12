"""Central-difference verification of every backward pass.

The checker promotes all inputs to float64, projects the output onto a
fixed random upstream tensor, and compares analytic gradients against
(f(x+h) - f(x-h)) / 2h at randomly sampled coordinates.  Relative error
is |a - n| / max(|a|, |n|, 1e-8); the worst sampled coordinate is
returned.
"""

from __future__ import annotations

import numpy as np

from . import kernels, rng, tensor
from .blocks import Block, BlockSpec, named_block_params
from .kernels import BatchNormState, KernelSpec

DEFAULT_STEP = 1e-5


def grad_check(forward, backward, inputs, seed: int = 0,
               h: float = DEFAULT_STEP, max_coords: int = 24) -> float:
    """Worst relative error between analytic and numeric gradients.

    forward(*arrays) -> array; backward(*arrays, upstream) -> tuple of
    gradients aligned with `inputs` (None marks a non-differentiable
    input).  Runs entirely in float64.
    """
    xs = [np.array(a, dtype=np.float64) for a in inputs]
    y = forward(*xs)
    u = rng.uniform(y.shape, -1.0, 1.0, rng.derive_seed(seed, "upstream"),
                    dtype=np.float64)
    analytic = backward(*xs, u)
    worst = 0.0
    for i, (arr, grad) in enumerate(zip(xs, analytic)):
        if grad is None:
            continue
        stream = rng.Stream(rng.derive_seed(seed, f"coords.{i}"))
        count = min(max_coords, arr.size)
        coords = np.unique(stream.integers(count, 0, arr.size - 1))
        for ci in coords:
            orig = arr.flat[ci]
            arr.flat[ci] = orig + h
            fp = float((forward(*xs) * u).sum())
            arr.flat[ci] = orig - h
            fm = float((forward(*xs) * u).sum())
            arr.flat[ci] = orig
            numeric = (fp - fm) / (2.0 * h)
            a = float(grad.flat[ci])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, rel)
    return worst


# ---------------------------------------------------------------------------
# named checks for the CLI and the acceptance suite

def _seeded(shape, seed, lo=-1.0, hi=1.0):
    return rng.uniform(shape, lo, hi, seed, dtype=np.float64)


def _conv_check(spec: KernelSpec, x_shape, fwd, bwd):
    def run(seed: int, h: float) -> float:
        x = _seeded(x_shape, rng.derive_seed(seed, "x"))
        w = _seeded(spec.weight_shape, rng.derive_seed(seed, "w"),
                    -0.5, 0.5)
        return grad_check(
            lambda xv, wv: fwd(xv, wv, spec),
            lambda xv, wv, u: bwd(xv, wv, spec, u),
            (x, w), seed=seed, h=h)
    return run


def _relu_check(seed: int, h: float) -> float:
    x = _seeded((2, 3, 2, 4, 4), rng.derive_seed(seed, "x"))
    x = x + 0.15 * np.sign(x)  # probe away from the kink at zero
    return grad_check(
        tensor.relu,
        lambda xv, u: (tensor.relu_backward(xv, u),),
        (x,), seed=seed, h=min(h, 1e-5))


def _batch_norm_check(seed: int, h: float) -> float:
    x = _seeded((2, 3, 2, 4, 4), rng.derive_seed(seed, "x"))
    gamma = _seeded((3,), rng.derive_seed(seed, "g"), 0.5, 1.5)
    beta = _seeded((3,), rng.derive_seed(seed, "b"), -0.5, 0.5)

    def fwd(xv, gv, bv):
        y, _ = kernels.batch_norm(xv, gv, bv, "train", BatchNormState.fresh(3))
        return y

    def bwd(xv, gv, bv, u):
        _, cache = kernels.batch_norm(xv, gv, bv, "train",
                                      BatchNormState.fresh(3))
        return kernels.batch_norm_backward(cache, u)

    return grad_check(fwd, bwd, (x, gamma, beta), seed=seed, h=h)


def _max_pool_check(seed: int, h: float) -> float:
    x = _seeded((1, 2, 2, 6, 6), rng.derive_seed(seed, "x"))

    def fwd(xv):
        return kernels.max_pool_spatial(xv, 3, 2, pad=1)[0]

    def bwd(xv, u):
        _, cache = kernels.max_pool_spatial(xv, 3, 2, pad=1)
        return (kernels.max_pool_spatial_backward(cache, u),)

    return grad_check(fwd, bwd, (x,), seed=seed, h=h)


def _global_pool_check(seed: int, h: float) -> float:
    x = _seeded((2, 3, 2, 3, 3), rng.derive_seed(seed, "x"))
    return grad_check(
        kernels.global_avg_pool,
        lambda xv, u: (kernels.global_avg_pool_backward(xv.shape, u),),
        (x,), seed=seed, h=h)


def _fc_check(seed: int, h: float) -> float:
    x = _seeded((4, 5), rng.derive_seed(seed, "x"))
    w = _seeded((5, 3), rng.derive_seed(seed, "w"))
    b = _seeded((3,), rng.derive_seed(seed, "b"))
    return grad_check(
        kernels.fully_connected,
        lambda xv, wv, bv, u: kernels.fully_connected_backward(xv, wv, u),
        (x, w, b), seed=seed, h=h)


def _softmax_check(seed: int, h: float) -> float:
    logits = _seeded((4, 5), rng.derive_seed(seed, "x"), -2.0, 2.0)
    labels = np.array([0, 2, 4, 1])

    def fwd(lv):
        loss, _ = kernels.softmax_cross_entropy(lv, labels)
        return np.array([loss])

    def bwd(lv, u):
        _, grad = kernels.softmax_cross_entropy(lv, labels)
        return (grad * u[0],)

    return grad_check(fwd, bwd, (logits,), seed=seed, h=h)


def _block_check(kind: str):
    def run(seed: int, h: float) -> float:
        spec = BlockSpec(kind, 8, 4, 16, spatial_stride=1)
        block = Block(spec, "gc")
        triples = list(named_block_params(block))
        params = [
            _seeded(unit.p[key].shape, rng.derive_seed(seed, path),
                    -0.6, 0.6)
            if key in ("kernel", "weight") else
            _seeded(unit.p[key].shape, rng.derive_seed(seed, path),
                    0.7, 1.3) if key == "gamma" else
            _seeded(unit.p[key].shape, rng.derive_seed(seed, path),
                    -0.2, 0.2)
            for path, unit, key in triples
        ]
        x = _seeded((1, 8, 3, 4, 4), rng.derive_seed(seed, "x"))

        def fwd(xv, *pv):
            for (path, unit, key), val in zip(triples, pv):
                unit.p[key] = val
            return block.forward(xv, train=True)

        def bwd(xv, *args):
            pv, u = args[:-1], args[-1]
            fwd(xv, *pv)
            gx = block.backward(u)
            return (gx, *[unit.g[key] for _, unit, key in triples])

        return grad_check(fwd, bwd, (x, *params), seed=seed, h=h,
                          max_coords=8)
    return run


def op_checks() -> dict:
    """name -> callable(seed, h) returning the worst relative error."""
    return {
        "relu": _relu_check,
        "conv_spatial": _conv_check(
            KernelSpec.same(1, 3, 2, 3), (1, 2, 2, 4, 4),
            kernels.conv_spatial, kernels.conv_spatial_backward),
        "conv_temporal": _conv_check(
            KernelSpec.same(3, 1, 2, 3), (1, 2, 5, 2, 2),
            kernels.conv_temporal, kernels.conv_temporal_backward),
        "conv_pointwise": _conv_check(
            KernelSpec(1, 1, 3, 4), (1, 3, 2, 3, 3),
            kernels.conv_pointwise, kernels.conv_pointwise_backward),
        "conv3d": _conv_check(
            KernelSpec(3, 3, 2, 3, stride_t=1, stride_s=2, pad_t=1,
                       pad_s=1), (1, 2, 4, 5, 5),
            kernels.conv3d, kernels.conv3d_backward),
        "batch_norm": _batch_norm_check,
        "max_pool": _max_pool_check,
        "global_avg_pool": _global_pool_check,
        "fully_connected": _fc_check,
        "softmax_cross_entropy": _softmax_check,
        "block_2d": _block_check("2d"),
        "block_a": _block_check("a"),
        "block_b": _block_check("b"),
        "block_c": _block_check("c"),
    }


def check_op(name: str, seed: int = 0, h: float = DEFAULT_STEP) -> float:
    checks = op_checks()
    if name not in checks:
        raise KeyError(f"no gradient check named {name!r}; "
                       f"known: {', '.join(sorted(checks))}")
    return checks[name](seed, h)
