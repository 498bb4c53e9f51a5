"""Shape plumbing on top of numpy arrays.

Arrays are row-major float64 throughout; feature maps are stored
channels-last as (H, W, C).
"""

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when operand extents are incompatible."""


def as_tensor(values, dtype=DTYPE) -> np.ndarray:
    return np.ascontiguousarray(values, dtype=dtype)


def reshape(t: np.ndarray, new_shape) -> np.ndarray:
    """Reinterpret ``t`` with ``new_shape`` without reordering data."""
    new_shape = tuple(int(s) for s in new_shape)
    if int(np.prod(new_shape, dtype=np.int64)) != t.size:
        raise ShapeError(f"cannot reshape {t.shape} into {new_shape}")
    return np.ascontiguousarray(t).reshape(new_shape)


def concat_last(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Concatenate along the last axis; leading extents must agree."""
    if a.ndim != b.ndim or a.shape[:-1] != b.shape[:-1]:
        raise ShapeError(f"leading extents differ: {a.shape} vs {b.shape}")
    return np.concatenate([a, b], axis=-1)


def split_last(t: np.ndarray, first: int):
    """Inverse of :func:`concat_last` for a known first-part width."""
    if not 0 <= first <= t.shape[-1]:
        raise ShapeError(f"split point {first} outside last extent {t.shape[-1]}")
    return t[..., :first].copy(), t[..., first:].copy()


def flatten(t: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(t).reshape(-1)
