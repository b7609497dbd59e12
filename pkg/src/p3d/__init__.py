"""Factorized spatio-temporal residual networks on plain numpy.

3x3x3 convolutions are replaced by a 1x3x3 spatial filter and a 3x1x1
temporal filter composed in three residual-block topologies (cascade,
parallel, cascade-with-skip), assembled into deep networks that can be
initialized from frame-wise 2D weights.  Every kernel is verified
against a naive convolution oracle and finite-difference gradients.
"""

__version__ = "0.1.0"

from .blocks import Block, BlockSpec, block_param_count, build_block
from .errors import (CheckpointError, DataError, NumericalError, ShapeError,
                     SpecError)
from .gradcheck import check_op, grad_check, op_checks
from .kernels import (BatchNormState, KernelSpec, batch_norm,
                      batch_norm_backward, conv3d, conv3d_backward,
                      conv_pointwise, conv_pointwise_backward, conv_spatial,
                      conv_spatial_backward, conv_temporal,
                      conv_temporal_backward, dropout, fully_connected,
                      fully_connected_backward, global_avg_pool,
                      max_pool_spatial, max_pool_spatial_backward,
                      softmax_cross_entropy)
from .motion import make_motion_dataset
from .network import (ArchSpec, NetworkGraph, block_kinds, build_network,
                      calibrate_running_stats, count_parameters,
                      inflate_from_2d, model_size_bytes, summarize)
from .reference import conv3d_ref
from .tensor import almost_equal, relu, relu_backward, tensor_add, tensor_new
from .training import LogRecord, TrainConfig, evaluate, lr_at, train

__all__ = [name for name in dir() if not name.startswith("_")]


def __getattr__(name):
    # heavier optional surfaces load lazily
    if name in ("P3DClassifier", "P3DFeatureExtractor", "validate_clips"):
        from . import estimators
        return getattr(estimators, name)
    if name in ("save_checkpoint", "load_checkpoint", "load_into",
                "network_from_checkpoint", "network_tensors"):
        from . import checkpoint
        return getattr(checkpoint, name)
    if name in ("extract_features", "write_features", "read_features",
                "clip_features"):
        from . import features
        return getattr(features, name)
    if name in ("ClipSource", "sample_clips", "preprocess", "read_ppm",
                "write_ppm", "read_clip_file", "write_clip_file",
                "load_clip_source", "resize_bilinear"):
        from . import video
        return getattr(video, name)
    if name in ("bench", "BenchResult"):
        from . import benchmark
        return getattr(benchmark, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
