"""Bottleneck residual units: the 2D baseline and the three factorized
spatio-temporal variants.

Every block reduces channels with a 1x1x1 convolution, runs a 1x3x3
spatial filter (S) and - except for the 2D baseline - a 3x1x1 temporal
filter (T), then restores channels with another 1x1x1 convolution and
adds the shortcut.  The variants differ in how S and T are wired:

    2d:  x + W(S(R(x)))                      spatial only, frame-wise
    a:   x + W(T(S(R(x))))                   cascade: T after S
    b:   x + W(S(R(x)) + T(R(x)))            parallel paths, summed
    c:   x + W(S(R(x)) + T(S(R(x))))         cascade plus skip around T

with batch norm and ReLU after R, S and T, batch norm (no ReLU) after
the restore, and a final ReLU after the shortcut addition
(post-activation residual convention).  The spatial stride of a
downsampling block is carried by S and by the projection shortcut.  In
the parallel variant that leaves the T path one resolution too fine, so
its output is subsampled (stride-2 selection) before the two paths are
summed; the subsampling keeps the paths addable without touching the T
operator itself.  Temporal extent is never strided inside a block.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, SpecError
from .kernels import KernelSpec
from .layers import BatchNorm, Conv

KINDS = ("2d", "a", "b", "c")
EXPANSION = 4


@dataclass(frozen=True)
class BlockSpec:
    """One bottleneck residual unit: kind, channel triple, stride."""

    kind: str
    in_ch: int
    mid_ch: int
    out_ch: int
    spatial_stride: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SpecError(f"block kind must be one of {KINDS}, got "
                            f"{self.kind!r}")
        if self.out_ch != EXPANSION * self.mid_ch:
            raise SpecError(
                f"bottleneck expansion requires out_ch = {EXPANSION} * mid_ch,"
                f" got mid={self.mid_ch} out={self.out_ch}")
        if self.spatial_stride not in (1, 2):
            raise SpecError(f"spatial_stride must be 1 or 2, got "
                            f"{self.spatial_stride}")
        if min(self.in_ch, self.mid_ch, self.out_ch) < 1:
            raise SpecError("channel counts must be positive")

    @property
    def projection(self) -> bool:
        """Projection shortcut iff channels or resolution change."""
        return self.in_ch != self.out_ch or self.spatial_stride != 1


def block_param_count(spec: BlockSpec) -> dict:
    """Exact weight counts per conv layer (BN excluded), plus total."""
    counts = {
        "reduce": spec.in_ch * spec.mid_ch,
        "spatial": spec.mid_ch * spec.mid_ch * 9,
        "temporal": 0 if spec.kind == "2d" else spec.mid_ch * spec.mid_ch * 3,
        "restore": spec.mid_ch * spec.out_ch,
        "projection": spec.in_ch * spec.out_ch if spec.projection else 0,
    }
    counts["total"] = sum(counts.values())
    return counts


class Block:
    """A built residual unit; composable inside a network graph."""

    def __init__(self, spec: BlockSpec, name: str = "block"):
        self.spec = spec
        self.name = name
        kind = spec.kind

        self.reduce = Conv(f"{name}.reduce", KernelSpec(
            1, 1, spec.in_ch, spec.mid_ch), "pointwise")
        self.bn1 = BatchNorm(f"{name}.bn1", spec.mid_ch)
        self.spatial = Conv(f"{name}.spatial", KernelSpec.same(
            1, 3, spec.mid_ch, spec.mid_ch, stride_s=spec.spatial_stride),
            "spatial")
        self.bn2 = BatchNorm(f"{name}.bn2", spec.mid_ch)
        if kind == "2d":
            self.temporal = None
            self.bn3 = None
        else:
            self.temporal = Conv(f"{name}.temporal", KernelSpec.same(
                3, 1, spec.mid_ch, spec.mid_ch), "temporal")
            self.bn3 = BatchNorm(f"{name}.bn3", spec.mid_ch)
        self.restore = Conv(f"{name}.restore", KernelSpec(
            1, 1, spec.mid_ch, spec.out_ch), "pointwise")
        self.bn4 = BatchNorm(f"{name}.bn4", spec.out_ch)
        if spec.projection:
            self.proj = Conv(f"{name}.proj", KernelSpec(
                1, 1, spec.in_ch, spec.out_ch,
                stride_s=spec.spatial_stride), "pointwise")
            self.bnp = BatchNorm(f"{name}.bnp", spec.out_ch)
        else:
            self.proj = None
            self.bnp = None
        self._masks = {}
        self._tshape = None

    # -- structure ---------------------------------------------------------

    def sublayers(self):
        for sub in (self.reduce, self.bn1, self.spatial, self.bn2,
                    self.temporal, self.bn3, self.restore, self.bn4,
                    self.proj, self.bnp):
            if sub is not None:
                yield sub

    @property
    def weight_count(self):
        return sum(s.weight_count for s in self.sublayers())

    @property
    def bn_count(self):
        return sum(getattr(s, "bn_count", 0) for s in self.sublayers())

    def out_shape(self, in_shape):
        n, c, t, h, w = in_shape
        if c != self.spec.in_ch:
            raise ShapeError(f"{self.name}: input channels {c} != "
                             f"{self.spec.in_ch}")
        s = self.spec.spatial_stride
        return (n, self.spec.out_ch, t, (h - 1) // s + 1, (w - 1) // s + 1)

    def describe(self):
        tags = {"2d": "2D bottleneck", "a": "P3D-A", "b": "P3D-B",
                "c": "P3D-C"}
        tag = tags[self.spec.kind]
        if self.spec.spatial_stride != 1:
            tag += f" /{self.spec.spatial_stride}"
        return tag

    # -- dataflow ----------------------------------------------------------

    def _relu(self, key, x, train):
        if train:
            self._masks[key] = x > 0
        return np.maximum(x, 0)

    def forward(self, x, train=False):
        kind = self.spec.kind
        u = self._relu("u", self.bn1.forward(self.reduce.forward(x, train),
                                             train), train)
        if kind == "2d":
            body = self._relu("v", self.bn2.forward(
                self.spatial.forward(u, train), train), train)
        elif kind == "a":
            v = self._relu("v", self.bn2.forward(
                self.spatial.forward(u, train), train), train)
            body = self._relu("t", self.bn3.forward(
                self.temporal.forward(v, train), train), train)
        elif kind == "b":
            vs = self._relu("v", self.bn2.forward(
                self.spatial.forward(u, train), train), train)
            vt = self._relu("t", self.bn3.forward(
                self.temporal.forward(u, train), train), train)
            s = self.spec.spatial_stride
            if s != 1:
                if train:
                    self._tshape = vt.shape
                vt = vt[:, :, :, ::s, ::s]
            body = vs + vt
        else:  # "c"
            v = self._relu("v", self.bn2.forward(
                self.spatial.forward(u, train), train), train)
            t = self._relu("t", self.bn3.forward(
                self.temporal.forward(v, train), train), train)
            body = v + t
        main = self.bn4.forward(self.restore.forward(body, train), train)
        if self.proj is not None:
            shortcut = self.bnp.forward(self.proj.forward(x, train), train)
        else:
            shortcut = x
        return self._relu("y", main + shortcut, train)

    def backward(self, upstream):
        kind = self.spec.kind
        g = upstream * self._masks.pop("y")
        g_short = g
        g_body = self.restore.backward(self.bn4.backward(g))
        if kind == "2d":
            gv = g_body * self._masks.pop("v")
            gu = self.spatial.backward(self.bn2.backward(gv))
        elif kind == "a":
            gt = g_body * self._masks.pop("t")
            gv = self.temporal.backward(self.bn3.backward(gt))
            gv *= self._masks.pop("v")
            gu = self.spatial.backward(self.bn2.backward(gv))
        elif kind == "b":
            gvs = g_body * self._masks.pop("v")
            s = self.spec.spatial_stride
            if s != 1:
                gfull = np.zeros(self._tshape, dtype=g_body.dtype)
                gfull[:, :, :, ::s, ::s] = g_body
                gvt = gfull * self._masks.pop("t")
            else:
                gvt = g_body * self._masks.pop("t")
            gu = self.spatial.backward(self.bn2.backward(gvs))
            gu = gu + self.temporal.backward(self.bn3.backward(gvt))
        else:  # "c"
            gt = g_body * self._masks.pop("t")
            gv = self.temporal.backward(self.bn3.backward(gt))
            gv = gv + g_body  # skip connection around T
            gv *= self._masks.pop("v")
            gu = self.spatial.backward(self.bn2.backward(gv))
        gu *= self._masks.pop("u")
        gx = self.reduce.backward(self.bn1.backward(gu))
        if self.proj is not None:
            gx = gx + self.proj.backward(self.bnp.backward(g_short))
        else:
            gx = gx + g_short
        return gx

    def state(self):
        return {}


def build_block(spec: BlockSpec, name: str = "block",
                init_seed: int | None = None) -> Block:
    """Construct a block; init_seed fills kernels with fan-in-scaled
    uniforms (see network.init_parameters), otherwise weights stay zero."""
    block = Block(spec, name)
    if init_seed is not None:
        from .network import init_parameters
        init_parameters(named_block_params(block), init_seed)
    return block


def named_block_params(block: Block):
    """(path, layer, key) triples for every parameter in the block."""
    for sub in block.sublayers():
        for key in sub.p:
            yield f"{sub.name}.{key}", sub, key
