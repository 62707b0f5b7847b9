"""Input validation helpers and shared error types.

Every public entry point funnels its array inputs through these helpers so
shape and domain errors surface with a consistent message before any math
runs.
"""

from __future__ import annotations

import numpy as np


class RasterFormatError(ValueError):
    """An image file uses an encoding or feature this package does not read."""


class ShapeMismatchError(ValueError):
    """Two inputs that must share dimensions do not."""


class DegenerateTrainingError(ValueError):
    """The training set cannot support a two-class model."""


def as_float_plane(image, name: str = "image") -> np.ndarray:
    """Coerce a 2-D array (or single-band raster) to a float64 plane."""
    data = getattr(image, "data", image)
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 3:
        if arr.shape[0] != 1:
            raise ShapeMismatchError(
                f"{name} must be single-band, got {arr.shape[0]} bands"
            )
        arr = arr[0]
    if arr.ndim != 2:
        raise ShapeMismatchError(f"{name} must be 2-D, got {arr.ndim}-D")
    return arr


def as_stack(stack, name: str = "stack") -> np.ndarray:
    """Coerce a feature stack (or its .data) to a float64 (depth, H, W) array."""
    data = getattr(stack, "data", stack)
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 3:
        raise ShapeMismatchError(f"{name} must be 3-D (depth, H, W), got {arr.ndim}-D")
    return arr


def check_same_shape(a: np.ndarray, b: np.ndarray, what: str = "inputs") -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"{what} differ in shape: {a.shape} vs {b.shape}")


def check_odd_window(size: int, name: str) -> None:
    if size < 3 or size % 2 == 0:
        raise ValueError(f"{name} must be an odd integer >= 3, got {size}")


def check_finite(arr: np.ndarray, name: str) -> None:
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite samples")
