"""Frame ingestion, clip sampling and preprocessing.

Frames come from directories of binary PPM (P6) images, ordered by
filename, or from raw `.clp` tensor files (one text header line
"N C T H W" followed by little-endian float32 data).  Both formats are
parsed natively so tests are bit-exact with no decoder dependencies.
Pixel values are scaled to [0, 1].
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import DataError, ShapeError
from .rng import Stream, derive_seed

CLIP_EXT = ".clp"


@dataclass
class ClipSource:
    """Ordered decoded frames, shape (frames, 3, H, W), float32."""

    frames: np.ndarray
    fps: float | None = None

    def __post_init__(self):
        f = np.asarray(self.frames, dtype=np.float32)
        if f.ndim != 4 or f.shape[1] != 3:
            raise DataError(
                f"frames must be (count, 3, H, W), got {f.shape}")
        self.frames = f

    def __len__(self):
        return self.frames.shape[0]


# ---------------------------------------------------------------------------
# PPM (P6)

def read_ppm(path) -> np.ndarray:
    """One binary PPM image as (3, H, W) float32 in [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataError(f"{path}: truncated PPM header")
        fields.append(data[start:pos])
    pos += 1  # single whitespace byte after maxval
    if fields[0] != b"P6":
        raise DataError(f"{path}: not a binary PPM (P6) file")
    try:
        width, height, maxval = (int(f) for f in fields[1:])
    except ValueError as exc:
        raise DataError(f"{path}: bad PPM header") from exc
    if maxval != 255:
        raise DataError(f"{path}: only maxval 255 is supported, got {maxval}")
    need = width * height * 3
    raster = data[pos:pos + need]
    if len(raster) != need:
        raise DataError(f"{path}: truncated PPM raster")
    img = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3)
    return (img.astype(np.float32) / 255.0).transpose(2, 0, 1)


def write_ppm(path, frame: np.ndarray) -> None:
    """(3, H, W) floats in [0, 1] to a binary PPM."""
    if frame.ndim != 3 or frame.shape[0] != 3:
        raise ShapeError(f"frame must be (3, H, W), got {frame.shape}")
    img = np.clip(np.round(np.asarray(frame, np.float64) * 255.0), 0, 255)
    img = img.astype(np.uint8).transpose(1, 2, 0)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{frame.shape[2]} {frame.shape[1]}\n255\n".encode())
        fh.write(img.tobytes())


# ---------------------------------------------------------------------------
# raw clip tensors

def write_clip_file(path, clip: np.ndarray) -> None:
    """5-D tensor to the `.clp` format (text header + float32 LE)."""
    clip = np.asarray(clip, dtype=np.float32)
    if clip.ndim != 5:
        raise ShapeError(f"clip must be 5-D, got {clip.shape}")
    with open(path, "wb") as fh:
        fh.write((" ".join(str(s) for s in clip.shape) + "\n").encode())
        fh.write(np.ascontiguousarray(clip, dtype="<f4").tobytes())


def read_clip_file(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.readline()
        try:
            shape = tuple(int(t) for t in header.split())
        except ValueError as exc:
            raise DataError(f"{path}: bad clip header {header!r}") from exc
        if len(shape) != 5 or any(s < 1 for s in shape):
            raise DataError(f"{path}: bad clip shape {shape}")
        count = int(np.prod(shape))
        data = np.frombuffer(fh.read(), dtype="<f4")
    if data.size != count:
        raise DataError(f"{path}: expected {count} values, found {data.size}")
    return data.reshape(shape).astype(np.float32)


def load_clip_source(path) -> ClipSource:
    """A ClipSource from a PPM directory or a single-clip `.clp` file."""
    if os.path.isdir(path):
        names = sorted(n for n in os.listdir(path)
                       if n.lower().endswith(".ppm"))
        if not names:
            raise DataError(f"{path}: no .ppm frames found")
        frames = np.stack([read_ppm(os.path.join(path, n)) for n in names])
        return ClipSource(frames)
    if path.endswith(CLIP_EXT):
        clip = read_clip_file(path)
        if clip.shape[0] != 1:
            raise DataError(f"{path}: expected a single clip, got batch "
                            f"{clip.shape[0]}")
        return ClipSource(clip[0].transpose(1, 0, 2, 3))
    raise DataError(f"{path}: not a frame directory or {CLIP_EXT} file")


# ---------------------------------------------------------------------------
# sampling and preprocessing

def sample_clips(src: ClipSource, clip_len: int = 16, num_clips=None,
                 mode: str = "nonoverlap", seed: int = 0) -> list:
    """Cut fixed-length clips, each shaped (1, 3, clip_len, H, W).

    nonoverlap tiles the video at starts 0, clip_len, 2*clip_len, ...;
    uniform_random draws `num_clips` start indices reproducibly.
    """
    total = len(src)
    if total < clip_len:
        raise DataError(
            f"need at least {clip_len} frames, source has {total}")
    if mode == "nonoverlap":
        starts = list(range(0, total - clip_len + 1, clip_len))
        if num_clips is not None:
            starts = starts[:num_clips]
    elif mode == "uniform_random":
        if num_clips is None:
            raise DataError("uniform_random sampling needs num_clips")
        stream = Stream(derive_seed(seed, "clip-starts"))
        starts = stream.integers(num_clips, 0, total - clip_len).tolist()
    else:
        raise DataError(f"unknown sampling mode {mode!r}")
    return [src.frames[s:s + clip_len].transpose(1, 0, 2, 3)[None]
            for s in starts]


def _resize_axis(x: np.ndarray, axis: int, size: int) -> np.ndarray:
    """Corner-aligned linear interpolation along one axis."""
    old = x.shape[axis]
    if old == size:
        return x
    if size == 1:
        pos = np.zeros(1)
    else:
        pos = np.arange(size) * ((old - 1) / (size - 1))
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, old - 1)
    frac = (pos - lo).astype(x.dtype)
    shape = [1] * x.ndim
    shape[axis] = size
    frac = frac.reshape(shape)
    return (np.take(x, lo, axis=axis) * (1 - frac)
            + np.take(x, hi, axis=axis) * frac)


def resize_bilinear(clip: np.ndarray, out_hw) -> np.ndarray:
    """Corner-aligned bilinear resize of the two trailing axes."""
    h, w = out_hw
    if h < 1 or w < 1:
        raise ShapeError(f"bad resize target {(h, w)}")
    return _resize_axis(_resize_axis(clip, -2, h), -1, w)


def crop_offsets(in_hw, crop_hw, mode: str, stream: Stream | None = None):
    ih, iw = in_hw
    ch, cw = crop_hw
    if ch > ih or cw > iw:
        raise ShapeError(f"crop {crop_hw} larger than frame {in_hw}")
    if mode == "center":
        return (ih - ch) // 2, (iw - cw) // 2
    if mode == "random":
        return (int(stream.integers(1, 0, ih - ch)[0]),
                int(stream.integers(1, 0, iw - cw)[0]))
    raise DataError(f"unknown crop mode {mode!r}")


def preprocess(clip: np.ndarray, resize_to=None, crop: str = "none",
               crop_size=None, flip: str = "none", mean=None,
               seed: int = 0) -> np.ndarray:
    """Resize, crop, flip and mean-subtract one (1,3,T,H,W) clip.

    Random crop offsets and the flip coin are drawn once per clip and
    applied identically to all frames.  `mean` is a per-channel triple
    subtracted at the end.
    """
    x = np.asarray(clip, dtype=np.float32)
    if x.ndim != 5:
        raise ShapeError(f"clip must be 5-D, got {x.shape}")
    stream = Stream(derive_seed(seed, "preprocess"))
    if resize_to is not None:
        x = resize_bilinear(x, resize_to)
    if crop != "none":
        if crop_size is None:
            raise DataError("crop requested without crop_size")
        oy, ox = crop_offsets(x.shape[-2:], crop_size, crop, stream)
        x = x[..., oy:oy + crop_size[0], ox:ox + crop_size[1]]
    if flip == "random":
        if float(stream.uniform(1)[0]) < 0.5:
            x = x[..., ::-1]
    elif flip == "always":
        x = x[..., ::-1]
    elif flip != "none":
        raise DataError(f"unknown flip mode {flip!r}")
    if mean is not None:
        mean = np.asarray(mean, dtype=np.float32)
        if mean.shape != (x.shape[1],):
            raise ShapeError(
                f"mean must have one entry per channel, got {mean.shape}")
        x = x - mean.reshape(1, -1, 1, 1, 1)
    return np.ascontiguousarray(x, dtype=np.float32)
