"""Assembly of full networks from residual blocks, plus introspection.

A network is a stem (1x7x7 spatial conv, BN, ReLU, 3x3 max pool), four
stages of bottleneck blocks, a global average pool over all temporal and
spatial positions (pool5), dropout, and a fully connected classifier.
Under the mixed policy the block kinds cycle a, b, c through the
flattened block sequence; temporal extent is preserved end to end, so
pool5 averages over every input frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rng
from .blocks import Block, BlockSpec
from .errors import ShapeError, SpecError
from .layers import BatchNorm, Conv, Dropout, GlobalAvgPool, Linear, MaxPool, ReLU
from .tensor import as_clip_batch

STAGE_BLOCKS = {50: (3, 4, 6, 3), 152: (3, 8, 36, 3)}
POLICIES = ("2d", "a", "b", "c", "mixed")
STEM_WIDTH = 64


@dataclass(frozen=True)
class ArchSpec:
    """Architecture description; stem_width 64 is the full-size network,
    smaller values give the reduced-width variants used for CPU-scale
    training experiments."""

    base_depth: int = 50
    block_policy: str = "mixed"
    num_classes: int = 101
    input_geometry: tuple = (16, 160, 160)
    dropout_rate: float = 0.0
    stem_width: int = STEM_WIDTH

    def __post_init__(self):
        if self.base_depth not in STAGE_BLOCKS:
            raise SpecError(f"base_depth must be one of "
                            f"{sorted(STAGE_BLOCKS)}, got {self.base_depth}")
        if self.block_policy not in POLICIES:
            raise SpecError(f"block_policy must be one of {POLICIES}, "
                            f"got {self.block_policy!r}")
        if self.num_classes < 1:
            raise SpecError("num_classes must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise SpecError("dropout_rate must lie in [0, 1)")
        if self.stem_width < 1:
            raise SpecError("stem_width must be positive")
        if len(self.input_geometry) != 3:
            raise SpecError("input_geometry is (T, H, W)")


def block_kinds(arch: ArchSpec) -> list:
    """Flattened block kinds; mixed cycles a, b, c by block index."""
    total = sum(STAGE_BLOCKS[arch.base_depth])
    if arch.block_policy == "mixed":
        return [("a", "b", "c")[i % 3] for i in range(total)]
    return [arch.block_policy] * total


class NetworkGraph:
    """Ordered layers with named parameters, forward and backward."""

    def __init__(self, arch: ArchSpec, layers: list):
        self.arch = arch
        self.layers = layers
        names = [p for p, _, _ in self.named_parameters()]
        if len(names) != len(set(names)):
            raise SpecError("duplicate parameter names in network")

    # -- traversal ---------------------------------------------------------

    def units(self):
        for layer in self.layers:
            if isinstance(layer, Block):
                yield from layer.sublayers()
            else:
                yield layer

    def blocks(self):
        return [l for l in self.layers if isinstance(l, Block)]

    def named_parameters(self):
        """(path, unit, key) for every trainable tensor, in graph order."""
        out = []
        for unit in self.units():
            for key in unit.p:
                out.append((f"{unit.name}.{key}", unit, key))
        return out

    def named_state(self):
        """(path, unit, key) for batch-norm running statistics."""
        out = []
        for unit in self.units():
            for key in unit.state():
                out.append((f"{unit.name}.{key}", unit, key))
        return out

    def param_arrays(self):
        return {path: unit.p[key] for path, unit, key in self.named_parameters()}

    def state_arrays(self):
        return {path: unit.state()[key] for path, unit, key in self.named_state()}

    # -- execution ---------------------------------------------------------

    def forward(self, x, train: bool = False):
        x = as_clip_batch(x)
        self._check_channels(x)
        for layer in self.layers:
            x = layer.forward(x, train=train)
        return x

    def backward(self, upstream):
        g = upstream
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def features(self, x):
        """pool5 activations (N, C); inference mode, no caches written."""
        x = as_clip_batch(x)
        self._check_channels(x)
        for layer in self.layers:
            x = layer.forward(x, train=False)
            if isinstance(layer, GlobalAvgPool):
                return x
        raise SpecError("network has no global pooling layer")

    @property
    def feature_width(self):
        return 4 * 8 * self.arch.stem_width

    def _check_channels(self, x):
        if x.shape[1] != 3:
            raise ShapeError(f"expected 3 input channels, got {x.shape[1]}")


def build_network(arch: ArchSpec, seed: int = 0,
                  zero_final_bn: bool = False) -> NetworkGraph:
    w0 = arch.stem_width
    stem_conv = Conv("stem.conv", kernel_spec_same(1, 7, 3, w0, stride_s=2),
                     "spatial")
    stem_conv.input_grad_needed = False  # nothing upstream of the stem
    layers = [
        stem_conv,
        BatchNorm("stem.bn", w0),
        ReLU("stem.relu"),
        MaxPool("stem.pool", 3, 2, pad=1),
    ]
    kinds = block_kinds(arch)
    in_ch = w0
    index = 0
    for stage, nblocks in enumerate(STAGE_BLOCKS[arch.base_depth], start=1):
        mid = w0 * (2 ** (stage - 1))
        out = 4 * mid
        for b in range(nblocks):
            stride = 2 if (stage > 1 and b == 0) else 1
            spec = BlockSpec(kinds[index], in_ch, mid, out, stride)
            layers.append(Block(spec, f"stage{stage}.block{b}"))
            in_ch = out
            index += 1
    layers += [
        GlobalAvgPool("head.pool"),
        Dropout("head.dropout", arch.dropout_rate,
                seed=rng.derive_seed(seed, "head.dropout")),
        Linear("head.fc", in_ch, arch.num_classes),
    ]
    net = NetworkGraph(arch, layers)
    init_parameters(net.named_parameters(), seed, zero_final_bn=zero_final_bn)
    return net


def kernel_spec_same(d, k, in_ch, out_ch, stride_t=1, stride_s=1):
    from .kernels import KernelSpec
    return KernelSpec.same(d, k, in_ch, out_ch, stride_t, stride_s)


def init_parameters(named, seed: int, zero_final_bn: bool = False) -> None:
    """Fan-in-scaled uniform init (variance 2/fan_in) for conv and fc
    weights, ones/zeros for BN scale/shift, zeros for fc bias."""
    for path, unit, key in named:
        if key == "kernel":
            shape = unit.spec.weight_shape
            fan_in = int(np.prod(shape[1:]))
            bound = math.sqrt(6.0 / fan_in)
            unit.p[key] = rng.uniform(shape, -bound, bound,
                                      rng.derive_seed(seed, path))
        elif key == "weight":
            fan_in = unit.in_features
            bound = math.sqrt(6.0 / fan_in)
            unit.p[key] = rng.uniform(unit.p[key].shape, -bound, bound,
                                      rng.derive_seed(seed, path))
        elif key == "gamma":
            zero = zero_final_bn and path.endswith(".bn4.gamma")
            unit.p[key] = (np.zeros if zero else np.ones)(
                unit.p[key].shape, np.float32)
        elif key in ("beta", "bias"):
            unit.p[key] = np.zeros(unit.p[key].shape, np.float32)


def calibrate_running_stats(net: NetworkGraph, x) -> NetworkGraph:
    """Set every BN's running statistics to the batch statistics of one
    train-mode pass over `x`.

    Freshly initialized networks carry the default running stats
    (mean 0, var 1), under which inference-mode activations are
    unnormalized and grow with depth; calibrating puts inference mode in
    the same numerical regime as training before a checkpoint is taken.
    """
    bns = [u for u in net.units() if isinstance(u, BatchNorm)]
    saved = [b.momentum for b in bns]
    for b in bns:
        b.momentum = 0.0
    try:
        net.forward(x, train=True)
    finally:
        for b, m in zip(bns, saved):
            b.momentum = m
    return net


# ---------------------------------------------------------------------------
# accounting

def count_parameters(net: NetworkGraph):
    """Per top-level layer (weight_count, bn_count) rows plus totals."""
    rows = []
    for layer in net.layers:
        w = int(layer.weight_count)
        bn = int(getattr(layer, "bn_count", 0))
        rows.append((layer.name, w, bn))
    total_w = sum(r[1] for r in rows)
    total_bn = sum(r[2] for r in rows)
    return rows, (total_w, total_bn)


def model_size_bytes(net: NetworkGraph, include_running: bool = False) -> int:
    """4 bytes per parameter; BN scale/shift included, running statistics
    only when include_running is set."""
    _, (total_w, total_bn) = count_parameters(net)
    total = total_w + total_bn
    if include_running:
        total += sum(v.size for v in net.state_arrays().values())
    return 4 * total


def summarize(net: NetworkGraph, geometry=None) -> str:
    """Deterministic column-aligned layer table for a given input size."""
    t, h, w = geometry if geometry is not None else net.arch.input_geometry
    shape = (1, 3, int(t), int(h), int(w))
    rows = [("layer", "kind", "output", "params")]
    for layer in net.layers:
        shape = layer.out_shape(shape)
        params = int(layer.weight_count) + int(getattr(layer, "bn_count", 0))
        rows.append((layer.name, layer.describe(),
                     "x".join(str(s) for s in shape), str(params)))
    _, (total_w, total_bn) = count_parameters(net)
    rows.append(("total", "", "", str(total_w + total_bn)))
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    lines = ["  ".join(col.ljust(wd) for col, wd in zip(row, widths)).rstrip()
             for row in rows]
    lines.insert(1, "-" * len(lines[0]))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# 2D -> 3D weight inflation

TEMPORAL_INITS = ("identity", "zeros", "random")


def _is_temporal(path: str) -> bool:
    return ".temporal." in path or ".bn3." in path


def inflate_from_2d(net: NetworkGraph, source: dict,
                    temporal_init: str = "identity",
                    seed: int = 0) -> NetworkGraph:
    """Copy frame-wise (2D) weights into a spatio-temporal network.

    Spatial kernels accept either their native rank-5 (O,I,1,k,k) shape
    or rank-4 (O,I,k,k) from an external 2D checkpoint.  Batch-norm
    parameters and running statistics are copied.  Temporal layers have
    no 2D source and are set per `temporal_init`:

    - identity: per-channel taps [0,1,0]; the temporal BN is set to the
      exact inference-mode identity for cascade (kind a) blocks and to
      zero scale for parallel (kind b/c) blocks, so every block computes
      exactly what its 2D source computes and the whole inflated network
      reproduces the 2D network frame for frame.
    - zeros: temporal kernels all zero (the path contributes nothing).
    - random: fan-in-scaled random taps.

    The classifier is copied only when class counts match; otherwise it
    keeps its fresh initialization.
    """
    if temporal_init not in TEMPORAL_INITS:
        raise SpecError(f"temporal_init must be one of {TEMPORAL_INITS}")
    for path, unit, key in net.named_parameters():
        if _is_temporal(path):
            continue
        if path.startswith("head.fc."):
            if path not in source or source[path].shape != unit.p[key].shape:
                continue  # class counts differ: keep fresh head
            unit.p[key] = source[path].astype(np.float32).copy()
            continue
        if path not in source:
            raise ShapeError(f"2D checkpoint is missing tensor {path!r}")
        val = np.asarray(source[path])
        if key == "kernel" and val.ndim == 4:
            val = val[:, :, None, :, :]
        if val.shape != unit.p[key].shape:
            raise ShapeError(
                f"inflation shape mismatch at {path!r}: source "
                f"{tuple(val.shape)} vs target {tuple(unit.p[key].shape)}")
        unit.p[key] = val.astype(np.float32).copy()
    for path, unit, key in net.named_state():
        if _is_temporal(path):
            continue
        if path not in source:
            raise ShapeError(f"2D checkpoint is missing tensor {path!r}")
        val = np.asarray(source[path])
        if val.shape != unit.state()[key].shape:
            raise ShapeError(
                f"inflation shape mismatch at {path!r}: source "
                f"{tuple(val.shape)} vs target "
                f"{tuple(unit.state()[key].shape)}")
        unit.state()[key][...] = val.astype(np.float32)
    for block in net.blocks():
        if block.temporal is None:
            continue
        _init_temporal(block, temporal_init, seed)
    return net


def _identity_gamma(eps: float) -> np.float32:
    """The float32 gamma whose inference-mode scale gamma/sqrt(1+eps) is
    bitwise 1.0, so an identity-tap temporal layer is exactly transparent."""
    inv_std = np.float32(1.0) / np.sqrt(np.float32(1.0) + np.float32(eps))
    g = np.float32(math.sqrt(1.0 + eps))
    for _ in range(8):
        scale = np.float32(g * inv_std)
        if scale == np.float32(1.0):
            return g
        g = np.nextafter(g, np.float32(2.0) if scale < 1.0 else np.float32(0.0))
    return np.float32(math.sqrt(1.0 + eps))


def _init_temporal(block: Block, temporal_init: str, seed: int) -> None:
    mid = block.spec.mid_ch
    shape = block.temporal.spec.weight_shape  # (mid, mid, 3, 1, 1)
    if temporal_init == "identity":
        kernel = np.zeros(shape, np.float32)
        kernel[np.arange(mid), np.arange(mid), 1, 0, 0] = 1.0
        # cascade blocks need T o BN to be exactly transparent in
        # inference mode; parallel paths must contribute zero instead,
        # so their scale is zeroed.
        if block.spec.kind == "a":
            gamma = _identity_gamma(block.bn3.eps)
        else:
            gamma = np.float32(0.0)
        block.bn3.p["gamma"] = np.full(mid, gamma, np.float32)
    elif temporal_init == "zeros":
        kernel = np.zeros(shape, np.float32)
        block.bn3.p["gamma"] = np.ones(mid, np.float32)
    else:
        fan_in = int(np.prod(shape[1:]))
        bound = math.sqrt(6.0 / fan_in)
        kernel = rng.uniform(shape, -bound, bound,
                             rng.derive_seed(seed, f"{block.name}.temporal"))
        block.bn3.p["gamma"] = np.ones(mid, np.float32)
    block.temporal.p["kernel"] = kernel
    block.bn3.p["beta"] = np.zeros(mid, np.float32)
    block.bn3.running.mean = np.zeros(mid, np.float32)
    block.bn3.running.var = np.ones(mid, np.float32)
