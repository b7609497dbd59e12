"""Synthetic motion dataset: direction is the only class signal.

Class 0 clips show a bright square drifting left to right; each class 1
clip is the exact frame-reversal of a class 0 clip, so the two members
of a pair contain identical frame sets.  Any model that scores frames
independently and averages (a frame-wise 2D network) therefore produces
identical outputs for both members and cannot beat chance, while a model
with temporal connections can separate the classes.  Start row, speed
and pixel noise vary per pair, and the noise is baked into the frames so
reversal preserves it.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DataError
from .rng import Stream, derive_seed

SQUARE = 4
BRIGHT = 1.0
NOISE = 0.05


def make_motion_dataset(n_per_class: int = 8, geometry=(3, 16, 32, 32),
                        seed: int = 0):
    """(clips, labels): 2*n_per_class clips of shape geometry.

    Even indices are class 0 (left-to-right), each followed by its
    reversed class 1 twin.
    """
    if n_per_class < 1:
        raise DataError("need at least one clip per class")
    c, t, h, w = geometry
    if c != 3:
        raise DataError(f"geometry must have 3 channels, got {c}")
    max_travel = w - SQUARE - 1
    if max_travel < t - 1:
        raise DataError(f"frame width {w} too small for {t}-frame motion")
    clips = np.empty((2 * n_per_class, c, t, h, w), np.float32)
    labels = np.empty(2 * n_per_class, np.int64)
    stream = Stream(derive_seed(seed, "motion"))
    max_speed = min(1.6, max_travel / (t - 1)) if t > 1 else 1.0
    for i in range(n_per_class):
        row = int(stream.integers(1, 0, h - SQUARE)[0])
        speed = float(stream.uniform(1, 0.8, max_speed, dtype=np.float64)[0])
        travel = int(math.ceil((t - 1) * speed))
        col0 = int(stream.integers(1, 0, w - SQUARE - travel)[0])
        noise = stream.uniform((c, t, h, w), -NOISE, NOISE)
        clip = noise.copy()
        for ti in range(t):
            col = col0 + int(round(ti * speed))
            clip[:, ti, row:row + SQUARE, col:col + SQUARE] += BRIGHT
        clips[2 * i] = clip
        clips[2 * i + 1] = clip[:, ::-1]
        labels[2 * i] = 0
        labels[2 * i + 1] = 1
    return clips, labels
