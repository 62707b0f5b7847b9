"""Per-pixel oriented-gradient structure descriptor (CFOG).

A single-channel image is expanded into a depth-D stack of rectified
directional-gradient responses, smoothed in X/Y by a truncated Gaussian and
along the orientation axis by a cyclic [1, 2, 1]/4 kernel, then L2-normalized
per pixel. Because gradients remove any constant offset and the per-pixel
normalization removes any positive gain, the descriptor is invariant to
radiometric (gain/bias) differences between acquisitions, which is what makes
correlation on these stacks meaningful across sensors and dates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from sklearn.base import BaseEstimator, TransformerMixin

from .raster import MultibandRaster
from .validation import ShapeMismatchError, as_float_plane, check_finite, check_same_shape


@dataclass(frozen=True)
class CfogParams:
    """Descriptor configuration.

    ``orientations`` channels sample directions theta_d = d*pi/D over [0, pi).
    ``sigma`` is the X/Y Gaussian std-dev in pixels (kernel truncated at
    radius ceil(3*sigma) and renormalized to sum 1). ``epsilon`` is the
    normalization floor: pixels whose pre-normalization vector norm falls
    below it become exact zero vectors instead of amplified noise.
    """

    orientations: int = 9
    sigma: float = 1.0
    epsilon: float = 1e-5

    def __post_init__(self):
        if self.orientations < 2:
            raise ValueError(f"orientations must be >= 2, got {self.orientations}")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")

    def angles(self) -> np.ndarray:
        d = np.arange(self.orientations, dtype=np.float64)
        return d * math.pi / self.orientations


@dataclass(frozen=True)
class FeatureStack:
    """A (depth, height, width) volume of non-negative descriptor samples."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.data, dtype=np.float64))
        if arr.ndim != 3:
            raise ShapeMismatchError(
                f"feature stack must be (depth, H, W), got {arr.ndim}-D"
            )
        check_finite(arr, "feature stack")
        if arr.size and arr.min() < 0:
            raise ValueError("feature stack samples must be non-negative")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def depth(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def to_raster(self) -> MultibandRaster:
        """View as a depth-band raster (e.g. for .sdf serialization)."""
        return MultibandRaster(self.data)


def gradients(image) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference gradients with replicated-edge padding.

    gx(x, y) = (I(x+1, y) - I(x-1, y)) / 2 and likewise for gy; border pixels
    see their own value replicated outward, so a constant image yields zero
    gradients everywhere including the frame.
    """
    plane = as_float_plane(image)
    h, w = plane.shape
    if h < 3 or w < 3:
        raise ValueError(f"image must be at least 3x3, got {w}x{h}")
    padded = np.pad(plane, 1, mode="edge")
    gx = (padded[1:-1, 2:] - padded[1:-1, :-2]) * 0.5
    gy = (padded[2:, 1:-1] - padded[:-2, 1:-1]) * 0.5
    return gx, gy


def oriented_channels(gx: np.ndarray, gy: np.ndarray, params: CfogParams | None = None) -> FeatureStack:
    """Rectified directional derivative per orientation: |gx cos + gy sin|.

    The absolute value makes channels contrast-sign invariant, so edges that
    flip polarity between acquisitions still land in the same channel.
    """
    params = params or CfogParams()
    gx = np.asarray(gx, dtype=np.float64)
    gy = np.asarray(gy, dtype=np.float64)
    check_same_shape(gx, gy, "gradient planes")
    angles = params.angles()
    stack = np.abs(
        gx[np.newaxis] * np.cos(angles)[:, np.newaxis, np.newaxis]
        + gy[np.newaxis] * np.sin(angles)[:, np.newaxis, np.newaxis]
    )
    return FeatureStack(stack)


def _gaussian_kernel(sigma: float) -> np.ndarray:
    radius = math.ceil(3.0 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (x / sigma) ** 2)
    return kernel / kernel.sum()


def _smooth_plane(plane: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # Two separable 1-D passes; replicated-edge padding keeps the kernel's
    # unit sum exact at the borders.
    r = kernel.size // 2
    padded = np.pad(plane, ((0, 0), (r, r)), mode="edge")
    out = sliding_window_view(padded, kernel.size, axis=1) @ kernel
    padded = np.pad(out, ((r, r), (0, 0)), mode="edge")
    return sliding_window_view(padded, kernel.size, axis=0) @ kernel


def gaussian_smooth(plane, sigma: float) -> np.ndarray:
    """Separable Gaussian blur of a 2-D plane (truncated at 3 sigma)."""
    arr = np.asarray(plane, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeMismatchError(f"plane must be 2-D, got {arr.ndim}-D")
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    return _smooth_plane(arr, _gaussian_kernel(sigma))


def smooth_and_normalize(stack: FeatureStack, params: CfogParams | None = None) -> FeatureStack:
    """Gaussian-smooth each channel, blend neighboring orientations, normalize.

    The orientation pass convolves each pixel's depth vector with [1, 2, 1]/4
    using cyclic wrap (orientations are periodic over pi, so channel 0 and
    channel D-1 are neighbors). Per-pixel L2 normalization then maps every
    vector to unit length; vectors whose norm is below ``epsilon`` become
    exact zero vectors (flat, structure-free pixels).
    """
    params = params or CfogParams()
    arr = stack.data if isinstance(stack, FeatureStack) else np.asarray(stack, dtype=np.float64)
    if arr.shape[0] != params.orientations:
        raise ShapeMismatchError(
            f"stack depth {arr.shape[0]} != orientations {params.orientations}"
        )
    kernel = _gaussian_kernel(params.sigma)
    smoothed = np.empty_like(arr)
    for d in range(arr.shape[0]):
        smoothed[d] = _smooth_plane(arr[d], kernel)
    blended = (np.roll(smoothed, 1, axis=0) + 2.0 * smoothed + np.roll(smoothed, -1, axis=0)) * 0.25
    norms = np.sqrt(np.einsum("dhw,dhw->hw", blended, blended))
    keep = norms >= params.epsilon
    out = np.where(keep[np.newaxis], blended, 0.0)
    np.divide(out, norms[np.newaxis], out=out, where=keep[np.newaxis])
    return FeatureStack(out)


def extract_cfog(image, params: CfogParams | None = None) -> FeatureStack:
    """Full descriptor: gradients -> oriented channels -> smooth + normalize."""
    params = params or CfogParams()
    gx, gy = gradients(image)
    return smooth_and_normalize(oriented_channels(gx, gy, params), params)


class CfogExtractor(BaseEstimator, TransformerMixin):
    """Stateless transformer wrapping :func:`extract_cfog`.

    ``transform`` maps one single-band image (2-D array or one-band raster)
    to its (orientations, H, W) descriptor array.
    """

    def __init__(self, orientations: int = 9, sigma: float = 1.0, epsilon: float = 1e-5):
        self.orientations = orientations
        self.sigma = sigma
        self.epsilon = epsilon

    def _params(self) -> CfogParams:
        return CfogParams(self.orientations, self.sigma, self.epsilon)

    def fit(self, X, y=None):
        self._params()  # validate configuration
        return self

    def transform(self, X) -> np.ndarray:
        return extract_cfog(X, self._params()).data
