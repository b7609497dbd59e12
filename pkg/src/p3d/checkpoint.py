"""Named-tensor checkpoint archive (.p3dc), bit-exact on round trip.

Little-endian layout:

    magic   "P3DC"
    u32     version (= 1)
    u32     tensor count
    per tensor:
        u32     name length, then that many utf-8 bytes
        u8      rank
        u64[rank] dims
        f32[prod(dims)] data
    u64     payload checksum

The checksum covers every byte between the 12-byte header and the
checksum itself, using the lane-parallel FNV-1a defined in p3d.rng
(see docs/formats.md).  Architecture metadata rides along as an ordinary
tensor named "_meta.arch" so a network can be rebuilt from its file.
"""

from __future__ import annotations

import struct

import numpy as np

from . import rng
from .errors import CheckpointError, ShapeError
from .network import ArchSpec, NetworkGraph, build_network

MAGIC = b"P3DC"
VERSION = 1
META_NAME = "_meta.arch"

_POLICY_CODES = {"2d": 0, "a": 1, "b": 2, "c": 3, "mixed": 4}
_POLICY_NAMES = {v: k for k, v in _POLICY_CODES.items()}


def _meta_tensor(arch: ArchSpec) -> np.ndarray:
    t, h, w = arch.input_geometry
    return np.array([arch.base_depth, _POLICY_CODES[arch.block_policy],
                     arch.num_classes, arch.stem_width, arch.dropout_rate,
                     t, h, w], dtype=np.float32)


def _meta_arch(meta: np.ndarray) -> ArchSpec:
    if meta.size != 8:
        raise CheckpointError(f"malformed {META_NAME} tensor")
    vals = meta.astype(np.float64)
    return ArchSpec(base_depth=int(vals[0]),
                    block_policy=_POLICY_NAMES[int(vals[1])],
                    num_classes=int(vals[2]),
                    stem_width=int(vals[3]),
                    dropout_rate=float(vals[4]),
                    input_geometry=(int(vals[5]), int(vals[6]), int(vals[7])))


def network_tensors(net: NetworkGraph) -> dict:
    """All named tensors of a network, metadata first."""
    tensors = {META_NAME: _meta_tensor(net.arch)}
    tensors.update(net.param_arrays())
    tensors.update(net.state_arrays())
    return tensors


def save_tensors(tensors: dict, path) -> None:
    names = list(tensors)
    if len(names) != len(set(names)):
        raise CheckpointError("duplicate tensor names")
    chunks = []
    for name in names:
        arr = np.ascontiguousarray(np.asarray(tensors[name], dtype="<f4"))
        nb = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes())
    checksum = rng.payload_checksum(chunks)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(names)))
        for c in chunks:
            fh.write(c)
        fh.write(struct.pack("<Q", checksum))


def save_checkpoint(net: NetworkGraph, path) -> None:
    save_tensors(network_tensors(net), path)


def load_checkpoint(path) -> dict:
    """Parse and verify a checkpoint; returns name -> float32 array."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 20:
        raise CheckpointError(f"{path}: truncated file")
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r}")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    payload = blob[12:-8]
    (stored_sum,) = struct.unpack_from("<Q", blob, len(blob) - 8)
    if rng.payload_checksum([payload]) != stored_sum:
        raise CheckpointError(f"{path}: payload checksum mismatch")
    tensors = {}
    off = 0
    for _ in range(count):
        try:
            (name_len,) = struct.unpack_from("<I", payload, off)
            off += 4
            name = payload[off:off + name_len].decode("utf-8")
            if len(payload[off:off + name_len]) != name_len:
                raise struct.error("short name")
            off += name_len
            (rank,) = struct.unpack_from("<B", payload, off)
            off += 1
            dims = struct.unpack_from(f"<{rank}Q", payload, off)
            off += 8 * rank
            size = int(np.prod(dims)) if rank else 1
            data = np.frombuffer(payload, dtype="<f4", count=size,
                                 offset=off)
            off += 4 * size
        except (struct.error, ValueError) as exc:
            raise CheckpointError(f"{path}: truncated tensor table "
                                  f"({exc})") from exc
        if name in tensors:
            raise CheckpointError(f"{path}: duplicate tensor {name!r}")
        tensors[name] = data.reshape(dims).astype(np.float32)
    if off != len(payload):
        raise CheckpointError(f"{path}: {len(payload) - off} trailing bytes")
    return tensors


def load_into(net: NetworkGraph, tensors: dict) -> NetworkGraph:
    """Strictly load named tensors into an existing graph."""
    seen = {META_NAME}
    for path, unit, key in net.named_parameters():
        if path not in tensors:
            raise CheckpointError(f"checkpoint is missing tensor {path!r}")
        val = tensors[path]
        if tuple(val.shape) != tuple(unit.p[key].shape):
            raise ShapeError(
                f"shape mismatch at {path!r}: checkpoint "
                f"{tuple(val.shape)} vs network {tuple(unit.p[key].shape)}")
        unit.p[key] = val.astype(np.float32).copy()
        seen.add(path)
    for path, unit, key in net.named_state():
        if path not in tensors:
            raise CheckpointError(f"checkpoint is missing tensor {path!r}")
        val = tensors[path]
        target = unit.state()[key]
        if tuple(val.shape) != tuple(target.shape):
            raise ShapeError(
                f"shape mismatch at {path!r}: checkpoint "
                f"{tuple(val.shape)} vs network {tuple(target.shape)}")
        target[...] = val
        seen.add(path)
    extra = [n for n in tensors if n not in seen]
    if extra:
        raise CheckpointError(f"checkpoint has unknown tensors: "
                              f"{', '.join(sorted(extra)[:5])}")
    return net


def network_from_checkpoint(path) -> NetworkGraph:
    """Rebuild the architecture from file metadata and load its weights."""
    tensors = load_checkpoint(path)
    if META_NAME not in tensors:
        raise CheckpointError(f"{path}: no {META_NAME} tensor; cannot "
                              "reconstruct the architecture")
    net = build_network(_meta_arch(tensors[META_NAME]))
    return load_into(net, tensors)
