"""Dense float64 tensors and seeded random streams.

Tensors are plain C-contiguous (row-major) ``numpy.ndarray`` objects; the
helpers here add the shape checks the rest of the package relies on.

Random streams use numpy's PCG64 bit generator seeded through
``SeedSequence``.  A child stream is addressed by a path of integers
(``derive_stream(seed, 3, 0)``) and is stable across platforms and numpy
releases that keep the PCG64/SeedSequence contract.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

DTYPE = np.float64


def _check_extents(shape):
    shape = tuple(int(s) for s in shape)
    if not shape or any(s < 1 for s in shape):
        raise ShapeError(f"all extents must be >= 1, got {list(shape)}")
    return shape


def tensor_new(shape, fill=0.0):
    """Return a new tensor of ``shape`` with every element equal to ``fill``."""
    return np.full(_check_extents(shape), fill, dtype=DTYPE)


def as_tensor(data, shape=None):
    """Copy ``data`` into a contiguous float64 tensor, optionally reshaped."""
    arr = np.array(data, dtype=DTYPE, order="C")
    if shape is not None:
        shape = _check_extents(shape)
        if arr.size != int(np.prod(shape)):
            raise ShapeError(f"{arr.size} values cannot fill shape {list(shape)}")
        arr = arr.reshape(shape)
    return arr


def map2(a, b, f):
    """Apply the elementwise binary function ``f`` to equal-shaped tensors."""
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.shape != b.shape:
        raise ShapeError(f"map2 shape mismatch: {list(a.shape)} vs {list(b.shape)}")
    out = f(a, b)
    return np.ascontiguousarray(out, dtype=DTYPE)


def matmul(a, b):
    """Rank-2 matrix product with an explicit inner-extent check."""
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.ndim} and {b.ndim}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner mismatch: {list(a.shape)} x {list(b.shape)}")
    return a @ b


def flat_index(shape, index):
    """Row-major flat offset of a multi-index."""
    return int(np.ravel_multi_index(tuple(index), tuple(shape)))


def unravel(shape, offset):
    return tuple(int(i) for i in np.unravel_index(offset, tuple(shape)))


def seed_sequence(seed, *path):
    """SeedSequence for the stream at ``path`` below root ``seed``."""
    return np.random.SeedSequence(int(seed), spawn_key=tuple(int(p) for p in path))


def child_sequence(parent, index):
    return np.random.SeedSequence(
        parent.entropy, spawn_key=tuple(parent.spawn_key) + (int(index),)
    )


def derive_stream(seed, *path):
    """Independent, reproducible generator for ``path`` under ``seed``.

    ``seed`` may also be a ``SeedSequence``, in which case ``path`` extends
    its spawn key.
    """
    if isinstance(seed, np.random.SeedSequence):
        seq = seed
        for p in path:
            seq = child_sequence(seq, p)
    else:
        seq = seed_sequence(seed, *path)
    return np.random.Generator(np.random.PCG64(seq))
