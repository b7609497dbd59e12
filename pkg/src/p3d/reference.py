"""Naive direct convolution, kept as the correctness oracle.

Deliberately written as plain nested scalar loops over python lists with
double-precision accumulation.  Never used by the network itself; the
optimized kernels in p3d.kernels must agree with it, and the test suite
enforces that on randomized geometries.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .kernels import KernelSpec, check_weights


def conv3d_ref(x: np.ndarray, w: np.ndarray, spec: KernelSpec) -> np.ndarray:
    """Direct nested-loop cross-correlation with zero padding."""
    if x.ndim != 5:
        raise ShapeError(f"conv input must be 5-D, got {x.shape}")
    check_weights(w, spec)
    if x.shape[1] != spec.in_ch:
        raise ShapeError(
            f"input has {x.shape[1]} channels, spec expects {spec.in_ch}")
    n, ci, t, h, wd = x.shape
    to, ho, wo = spec.out_extents(t, h, wd)
    xp = np.pad(x, ((0, 0), (0, 0), (spec.pad_t, spec.pad_t),
                    (spec.pad_s, spec.pad_s), (spec.pad_s, spec.pad_s)))
    xl = xp.tolist()
    wl = w.tolist()
    st, ss = spec.stride_t, spec.stride_s
    out = np.empty((n, spec.out_ch, to, ho, wo), dtype=np.float64)
    for b in range(n):
        for o in range(spec.out_ch):
            for ti in range(to):
                for hi in range(ho):
                    for wi in range(wo):
                        acc = 0.0
                        for c in range(ci):
                            xc = xl[b][c]
                            wc = wl[o][c]
                            for dt in range(spec.d):
                                xrow = xc[ti * st + dt]
                                wrow = wc[dt]
                                for dy in range(spec.k):
                                    xcol = xrow[hi * ss + dy]
                                    wcol = wrow[dy]
                                    for dx in range(spec.k):
                                        acc += xcol[wi * ss + dx] * wcol[dx]
                        out[b, o, ti, hi, wi] = acc
    return out.astype(x.dtype)
