"""Deterministic, platform-stable random numbers and hashing.

All seeded fills in this package come from one fixed counter-based scheme
(documented in docs/formats.md) so that tests and checkpoints reproduce
bit-for-bit on every platform:

    value[i] = mix64(seed + (i + 1) * 0x9E3779B97F4A7C15)

where mix64 is the 64-bit xor-shift/multiply finalizer

    z ^= z >> 30;  z *= 0xBF58476D1CE4E5B9
    z ^= z >> 27;  z *= 0x94D049BB133111EB
    z ^= z >> 31

with all arithmetic modulo 2**64.  Doubles in [0, 1) are taken as the top
53 bits: (value >> 11) * 2**-53.  Being counter-based, the stream is
random-access and trivially vectorizable.

The checkpoint checksum (`payload_checksum`) is a lane-parallel FNV-1a
over little-endian 64-bit words, defined in docs/formats.md.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_FNV_OFFSET = np.uint64(0xCBF29CE484222325)
_FNV_PRIME = np.uint64(0x100000001B3)

_U64 = np.uint64
_INV53 = float(2.0**-53)

CHECKSUM_LANES = 1024


def _mix64(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> _U64(30))) * _MIX1
        z = (z ^ (z >> _U64(27))) * _MIX2
        return z ^ (z >> _U64(31))


def raw64(seed: int, count: int, offset: int = 0) -> np.ndarray:
    """`count` raw 64-bit words of the stream, starting at `offset`."""
    idx = np.arange(offset + 1, offset + count + 1, dtype=np.uint64)
    return _mix64(_U64(seed & 0xFFFFFFFFFFFFFFFF) + idx * _GOLDEN)


def uniform(shape, lo: float, hi: float, seed: int, offset: int = 0,
            dtype=np.float32) -> np.ndarray:
    """Uniform fill on [lo, hi) with the documented stream."""
    n = int(np.prod(shape)) if np.ndim(shape) else int(shape)
    u = (raw64(seed, n, offset) >> _U64(11)).astype(np.float64) * _INV53
    out = lo + u * (hi - lo)
    return out.astype(dtype).reshape(shape)


def fnv1a64(data: bytes) -> int:
    """Plain byte-serial 64-bit FNV-1a; for short inputs such as names."""
    h = _FNV_OFFSET
    with np.errstate(over="ignore"):
        for byte in np.frombuffer(data, dtype=np.uint8).astype(np.uint64):
            h = (h ^ byte) * _FNV_PRIME
    return int(h)


def payload_checksum(chunks) -> int:
    """Lane-parallel FNV-1a over the concatenation of byte chunks.

    The payload is zero-padded to a whole number of little-endian 64-bit
    words and dealt round-robin across CHECKSUM_LANES lanes; lane `l`
    starts at mix64(FNV_OFFSET + l*GOLDEN) and absorbs each of its words
    with the FNV-1a step h = (h ^ w) * FNV_PRIME.  Lane digests and the
    original byte length are then folded serially and finalized with
    mix64.  Parallel across lanes, so it vectorizes; the result is still
    a pure function of the byte stream.
    """
    data = b"".join(c if isinstance(c, bytes) else c.tobytes()
                    for c in chunks)
    nbytes = len(data)
    lanes = CHECKSUM_LANES
    word_bytes = 8 * lanes
    if nbytes % word_bytes:
        data = data + b"\x00" * (word_bytes - nbytes % word_bytes)
    words = np.frombuffer(data, dtype="<u8").reshape(-1, lanes)
    with np.errstate(over="ignore"):
        h = _mix64(_FNV_OFFSET + np.arange(lanes, dtype=np.uint64) * _GOLDEN)
        for row in words:
            h = (h ^ row) * _FNV_PRIME
        digest = _FNV_OFFSET
        for lane in h:
            digest = (digest ^ lane) * _FNV_PRIME
        digest = (digest ^ _U64(nbytes & 0xFFFFFFFFFFFFFFFF)) * _FNV_PRIME
        return int(_mix64(digest))


def derive_seed(seed: int, name: str) -> int:
    """Stable per-tensor seed from a global seed and a parameter name."""
    mixed = _mix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) ^
                   np.uint64(fnv1a64(name.encode("utf-8"))))
    return int(mixed)


class Stream:
    """Stateful cursor over the counter-based stream.

    Used where consecutive draws must not repeat (dropout masks, clip
    sampling); each draw advances the offset.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.offset = 0

    def uniform(self, shape, lo: float = 0.0, hi: float = 1.0,
                dtype=np.float32) -> np.ndarray:
        n = int(np.prod(shape)) if np.ndim(shape) else int(shape)
        out = uniform(shape, lo, hi, self.seed, offset=self.offset,
                      dtype=dtype)
        self.offset += n
        return out

    def integers(self, n: int, lo: int, hi: int) -> np.ndarray:
        """`n` integers in [lo, hi] (inclusive), from the double stream."""
        if hi < lo:
            raise ValueError(f"empty integer range [{lo}, {hi}]")
        u = self.uniform(n, 0.0, 1.0, dtype=np.float64)
        return lo + np.minimum((u * (hi - lo + 1)).astype(np.int64),
                               hi - lo)

    def shuffled(self, n: int) -> np.ndarray:
        """A permutation of range(n) (Fisher-Yates over the stream)."""
        perm = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = int(self.integers(1, 0, i)[0])
            perm[i], perm[j] = perm[j], perm[i]
        return perm
