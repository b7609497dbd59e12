"""Video-level representation: clip features averaged over sampled clips."""

from __future__ import annotations

import struct

import numpy as np

from .errors import DataError
from .network import NetworkGraph
from .video import ClipSource, preprocess, sample_clips


def extract_features(net: NetworkGraph, source: ClipSource,
                     num_clips: int = 20, clip_len: int = 16,
                     seed: int = 0, resize_to=None, crop_size=None,
                     mean=None) -> np.ndarray:
    """One pooled feature vector for a video.

    Randomly samples `num_clips` clips of `clip_len` frames, optionally
    resizes and center-crops each, runs them through the network to the
    global pooling layer, and averages the per-clip activations.
    """
    clips = sample_clips(source, clip_len=clip_len, num_clips=num_clips,
                         mode="uniform_random", seed=seed)
    feats = []
    for clip in clips:
        if resize_to is not None or crop_size is not None:
            clip = preprocess(clip, resize_to=resize_to,
                              crop="center" if crop_size else "none",
                              crop_size=crop_size, mean=mean)
        elif mean is not None:
            clip = preprocess(clip, mean=mean)
        feats.append(net.features(clip)[0])
    return np.mean(np.stack(feats), axis=0, dtype=np.float64).astype(
        np.float32)


def clip_features(net: NetworkGraph, clips) -> np.ndarray:
    """Per-clip pooled activations, one row per clip."""
    return np.stack([net.features(c)[0] for c in clips])


def write_features(path, vec: np.ndarray) -> None:
    """u32 dimension, then that many little-endian float32 values."""
    vec = np.asarray(vec, dtype="<f4").ravel()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", vec.size))
        fh.write(vec.tobytes())


def read_features(path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(4)
        if len(head) != 4:
            raise DataError(f"{path}: truncated feature file")
        (dim,) = struct.unpack("<I", head)
        data = np.frombuffer(fh.read(), dtype="<f4")
    if data.size != dim:
        raise DataError(f"{path}: expected {dim} values, found {data.size}")
    return data.astype(np.float32)
