"""Reference detectors the structural pipeline is compared against.

CVA (change vector analysis) thresholds the per-pixel magnitude of the
spectral difference vector — fast, unsupervised, and deliberately naive
about radiometric gain/bias, which is exactly the weakness the structural
features sidestep. The intensity-domain NCI applies the same neighborhood
correlation mathematics as `neighborhood.nsci` directly to raw band values
instead of gradient-structure features.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .neighborhood import NeighborhoodParams, NsciMap, nsci
from .raster import BinaryMask, MultibandRaster
from .validation import ShapeMismatchError, check_odd_window


@dataclass(frozen=True)
class CvaParams:
    """Thresholding rule for the CVA magnitude: Otsu's method or a fixed cut."""

    threshold_mode: str = "otsu"
    fixed_threshold: float = 0.0

    def __post_init__(self):
        if self.threshold_mode not in ("otsu", "fixed"):
            raise ValueError(
                f"threshold_mode must be 'otsu' or 'fixed', got {self.threshold_mode!r}"
            )
        if self.threshold_mode == "fixed" and self.fixed_threshold < 0:
            raise ValueError("fixed_threshold must be >= 0")


@dataclass(frozen=True)
class CvaResult:
    magnitude: np.ndarray
    mask: BinaryMask
    threshold: float


def otsu_threshold(values: np.ndarray, bins: int = 256) -> float:
    """Threshold maximizing between-class variance of the binned histogram.

    Returns the upper edge of the last below-threshold bin, so
    ``values > threshold`` separates the two classes. A single-valued input
    has no two classes to separate and falls back to 0.0.
    """
    flat = np.asarray(values, dtype=np.float64).ravel()
    lo, hi = float(flat.min()), float(flat.max())
    if lo == hi:
        return 0.0
    hist, edges = np.histogram(flat, bins=bins, range=(lo, hi))
    weight = hist / flat.size
    centers = (edges[:-1] + edges[1:]) / 2.0
    w0 = np.cumsum(weight)[:-1]  # mass of bins 0..k for each split k
    w1 = 1.0 - w0
    cum_mean = np.cumsum(weight * centers)[:-1]
    total_mean = float((weight * centers).sum())
    valid = (w0 > 0) & (w1 > 0)
    between = np.zeros(bins - 1)
    np.divide(
        (total_mean * w0 - cum_mean) ** 2, w0 * w1, out=between, where=valid
    )
    split = int(np.argmax(between))
    return float(edges[split + 1])


def cva(t1: MultibandRaster, t2: MultibandRaster, params: CvaParams | None = None) -> CvaResult:
    """Per-pixel difference-vector magnitude, thresholded into a change mask.

    magnitude(p) = ||t2(p) - t1(p)||_2 across bands; the mask flags
    magnitude > threshold.
    """
    params = params or CvaParams()
    if t1.data.shape != t2.data.shape:
        raise ShapeMismatchError(
            f"rasters differ in shape: {t1.data.shape} vs {t2.data.shape}"
        )
    diff = t2.data - t1.data
    magnitude = np.sqrt((diff * diff).sum(axis=0))
    if params.threshold_mode == "otsu":
        threshold = otsu_threshold(magnitude)
    else:
        threshold = params.fixed_threshold
    mask = BinaryMask((magnitude > threshold).astype(np.uint8))
    return CvaResult(magnitude, mask, threshold)


def nci_intensity(t1: MultibandRaster, t2: MultibandRaster, window: int = 5) -> NsciMap:
    """Neighborhood correlation image over raw intensities.

    Identical mathematics to `neighborhood.nsci`, but the window samples are
    the raw band values (n = window^2 * bands) rather than structure
    features, so it inherits the sensitivity to radiometric differences that
    the structural variant avoids.
    """
    check_odd_window(window, "window")
    params = NeighborhoodParams(nsci_window=window)
    return nsci(t1.data, t2.data, params)
