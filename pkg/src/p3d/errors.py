"""Exception types shared across the package.

The CLI maps these onto exit codes: usage problems exit 1, data/format
problems exit 2, numerical verification failures exit 3.
"""


class ShapeError(ValueError):
    """Tensor extents are invalid or do not agree."""


class SpecError(ValueError):
    """A kernel/block/network specification violates its constraints."""


class DataError(ValueError):
    """Input data (frames, clips, datasets, CLI payloads) is malformed."""


class CheckpointError(DataError):
    """A checkpoint file is malformed, truncated, or inconsistent."""


class NumericalError(RuntimeError):
    """A numerical check failed or training diverged."""
