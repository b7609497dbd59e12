"""Stateful layer objects wrapping the functional kernels.

Each layer owns its parameter arrays (`p`), the gradients of the last
backward pass (`g`), and whatever cache its backward needs.  Caches are
only written when forward runs with train=True, so inference passes are
read-only over layer state and safe to run concurrently.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .errors import ShapeError
from .kernels import BatchNormState, KernelSpec
from .rng import Stream
from .tensor import relu as relu_fn


class Conv:
    """Bias-free convolution layer; `variant` selects the op contract."""

    _FORWARD = {
        "spatial": kernels.conv_spatial,
        "temporal": kernels.conv_temporal,
        "pointwise": kernels.conv_pointwise,
        "general": kernels.conv3d,
    }
    _BACKWARD = {
        "spatial": kernels.conv_spatial_backward,
        "temporal": kernels.conv_temporal_backward,
        "pointwise": kernels.conv_pointwise_backward,
        "general": kernels.conv3d_backward,
    }

    def __init__(self, name: str, spec: KernelSpec, variant: str):
        if variant not in self._FORWARD:
            raise ValueError(f"unknown conv variant {variant!r}")
        self.name = name
        self.spec = spec
        self.variant = variant
        self.p = {"kernel": np.zeros(spec.weight_shape, np.float32)}
        self.g = {}
        self.input_grad_needed = True
        self._x = None

    def forward(self, x, train=False):
        y = self._FORWARD[self.variant](x, self.p["kernel"], self.spec)
        if train:
            self._x = x
        return y

    def backward(self, upstream):
        gx, gw = self._BACKWARD[self.variant](
            self._x, self.p["kernel"], self.spec, upstream,
            need_input_grad=self.input_grad_needed)
        self.g["kernel"] = gw
        self._x = None
        return gx

    def out_shape(self, in_shape):
        n, c, t, h, w = in_shape
        if c != self.spec.in_ch:
            raise ShapeError(
                f"{self.name}: input channels {c} != {self.spec.in_ch}")
        return (n, self.spec.out_ch) + self.spec.out_extents(t, h, w)

    @property
    def weight_count(self):
        return int(np.prod(self.spec.weight_shape))

    def describe(self):
        s = self.spec
        tag = f"conv {s.d}x{s.k}x{s.k}"
        if s.stride_t != 1 or s.stride_s != 1:
            tag += f" /({s.stride_t},{s.stride_s})"
        return tag

    def state(self):
        return {}


class BatchNorm:
    def __init__(self, name: str, channels: int, eps: float = 1e-5,
                 momentum: float = 0.9):
        self.name = name
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.p = {"gamma": np.ones(channels, np.float32),
                  "beta": np.zeros(channels, np.float32)}
        self.g = {}
        self.running = BatchNormState.fresh(channels)
        self.frozen = False
        self._cache = None
        self._frozen_scale = None

    def forward(self, x, train=False):
        mode = "train" if (train and not self.frozen) else "inference"
        y, cache = kernels.batch_norm(
            x, self.p["gamma"], self.p["beta"], mode, self.running,
            eps=self.eps, momentum=self.momentum)
        if train:
            self._cache = cache
            if cache is None:
                # frozen BN backpropagates through the fixed affine map
                self._frozen_scale = (
                    self.p["gamma"] / np.sqrt(self.running.var + self.eps)
                ).astype(x.dtype)
        return y

    def backward(self, upstream):
        if self._cache is not None:
            gx, dgamma, dbeta = kernels.batch_norm_backward(
                self._cache, upstream)
            self._cache = None
        else:
            gx = upstream * self._frozen_scale.reshape(
                1, -1, *([1] * (upstream.ndim - 2)))
            dgamma = np.zeros(self.channels, upstream.dtype)
            dbeta = np.zeros(self.channels, upstream.dtype)
        self.g = {"gamma": dgamma, "beta": dbeta}
        return gx

    def out_shape(self, in_shape):
        return in_shape

    @property
    def weight_count(self):
        return 0

    @property
    def bn_count(self):
        return 2 * self.channels

    def describe(self):
        return "bn"

    def state(self):
        return {"mean": self.running.mean, "var": self.running.var}


class ReLU:
    def __init__(self, name: str):
        self.name = name
        self.p = {}
        self.g = {}
        self._mask = None

    def forward(self, x, train=False):
        if train:
            self._mask = x > 0
        return relu_fn(x)

    def backward(self, upstream):
        g = upstream * self._mask
        self._mask = None
        return g

    def out_shape(self, in_shape):
        return in_shape

    weight_count = 0

    def describe(self):
        return "relu"

    def state(self):
        return {}


class MaxPool:
    def __init__(self, name: str, window: int, stride: int, pad: int = 0):
        self.name = name
        self.window, self.stride, self.pad = window, stride, pad
        self.p = {}
        self.g = {}
        self._cache = None

    def forward(self, x, train=False):
        y, cache = kernels.max_pool_spatial(x, self.window, self.stride,
                                            self.pad)
        if train:
            self._cache = cache
        return y

    def backward(self, upstream):
        g = kernels.max_pool_spatial_backward(self._cache, upstream)
        self._cache = None
        return g

    def out_shape(self, in_shape):
        n, c, t, h, w = in_shape
        ho = (h + 2 * self.pad - self.window) // self.stride + 1
        wo = (w + 2 * self.pad - self.window) // self.stride + 1
        return (n, c, t, ho, wo)

    weight_count = 0

    def describe(self):
        return f"maxpool {self.window}x{self.window} /{self.stride}"

    def state(self):
        return {}


class GlobalAvgPool:
    """pool5: average over all temporal and spatial positions."""

    def __init__(self, name: str):
        self.name = name
        self.p = {}
        self.g = {}
        self._shape = None

    def forward(self, x, train=False):
        if train:
            self._shape = x.shape
        return kernels.global_avg_pool(x)

    def backward(self, upstream):
        g = kernels.global_avg_pool_backward(self._shape, upstream)
        self._shape = None
        return g

    def out_shape(self, in_shape):
        return (in_shape[0], in_shape[1])

    weight_count = 0

    def describe(self):
        return "global avgpool"

    def state(self):
        return {}


class Dropout:
    def __init__(self, name: str, rate: float, seed: int = 0):
        self.name = name
        self.rate = rate
        self.stream = Stream(seed)
        self.p = {}
        self.g = {}
        self._mask = None

    def forward(self, x, train=False):
        if not train or self.rate == 0.0:
            return x
        y, mask = kernels.dropout(x, self.rate, self.stream)
        self._mask = mask
        return y

    def backward(self, upstream):
        if self._mask is None:
            return upstream
        g = kernels.dropout_backward(self._mask, upstream)
        self._mask = None
        return g

    def out_shape(self, in_shape):
        return in_shape

    weight_count = 0

    def describe(self):
        return f"dropout p={self.rate}"

    def state(self):
        return {}


class Linear:
    def __init__(self, name: str, in_features: int, out_features: int):
        self.name = name
        self.in_features, self.out_features = in_features, out_features
        self.p = {"weight": np.zeros((in_features, out_features), np.float32),
                  "bias": np.zeros(out_features, np.float32)}
        self.g = {}
        self._x = None

    def forward(self, x, train=False):
        if train:
            self._x = x
        return kernels.fully_connected(x, self.p["weight"], self.p["bias"])

    def backward(self, upstream):
        gx, gw, gb = kernels.fully_connected_backward(
            self._x, self.p["weight"], upstream)
        self.g = {"weight": gw, "bias": gb}
        self._x = None
        return gx

    def out_shape(self, in_shape):
        return (in_shape[0], self.out_features)

    @property
    def weight_count(self):
        return self.in_features * self.out_features + self.out_features

    def describe(self):
        return f"fc {self.in_features}->{self.out_features}"

    def state(self):
        return {}
