"""Neighborhood structural correlation (NSCI) and matching error (ME).

Both operations compare two co-registered feature stacks. NSCI fits, per
pixel, the least-squares line between the samples of the two stacks gathered
from every layer inside a window (reflect-padded at borders), yielding the
correlation coefficient ``r``, slope ``a`` and intercept ``b``. ME template-
matches each pixel's small T1-stack block inside a larger T2 search region
using zero-mean normalized cross-correlation and reports how far the best
match moved from the center.

Per-pixel statistics over a window of side ``w`` on depth-``D`` stacks pool
``n = w*w*D`` samples:

    cov12 = sum((BV1 - mu1) * (BV2 - mu2)) / (n - 1)
    r     = cov12 / (s1 * s2)
    a     = cov12 / s1^2
    b     = (sum(BV2) - a * sum(BV1)) / n

where s1, s2 are sample standard deviations (n - 1 denominator). Windows
with s1 * s2 below ``variance_floor`` are degenerate: r = 0, a = 0, and b
falls back to the window mean of the second stack.

All functions are pure and deterministic; outputs do not depend on how
pixels are partitioned across workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from sklearn.base import BaseEstimator, TransformerMixin

from .raster import MultibandRaster
from .validation import ShapeMismatchError, as_stack, check_odd_window, check_same_shape


@dataclass(frozen=True)
class NeighborhoodParams:
    """Window configuration for NSCI and ME.

    ``nsci_window`` is the correlation window side; ``template`` and
    ``search`` are the ME matching windows (template slides inside search,
    so template < search). All sides are odd so windows center on a pixel.
    """

    nsci_window: int = 5
    template: int = 3
    search: int = 9
    variance_floor: float = 1e-12

    def __post_init__(self):
        check_odd_window(self.nsci_window, "nsci_window")
        check_odd_window(self.template, "template")
        check_odd_window(self.search, "search")
        if self.template >= self.search:
            raise ValueError(
                f"template ({self.template}) must be smaller than search ({self.search})"
            )
        if not self.variance_floor > 0:
            raise ValueError("variance_floor must be > 0")

    @property
    def max_shift(self) -> int:
        return (self.search - self.template) // 2

    @property
    def surface_side(self) -> int:
        return self.search - self.template + 1

    @property
    def me_bound(self) -> float:
        """Largest attainable matching error: the corner of the shift lattice."""
        return self.max_shift * math.sqrt(2.0)


@dataclass(frozen=True)
class NsciMap:
    """Per-pixel correlation ``r``, slope ``a`` and intercept ``b`` planes."""

    r: np.ndarray
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.r, dtype=np.float64)
        a = np.asarray(self.a, dtype=np.float64)
        b = np.asarray(self.b, dtype=np.float64)
        if not (r.shape == a.shape == b.shape) or r.ndim != 2:
            raise ShapeMismatchError("r, a, b must be equal-shape 2-D planes")
        if r.size and np.abs(r).max() > 1.0 + 1e-9:
            raise ValueError("correlation plane exceeds [-1, 1] beyond tolerance")
        for name, plane in (("r", r), ("a", a), ("b", b)):
            plane.flags.writeable = False
            object.__setattr__(self, name, plane)

    @property
    def height(self) -> int:
        return self.r.shape[0]

    @property
    def width(self) -> int:
        return self.r.shape[1]

    def to_raster(self) -> MultibandRaster:
        """3-band raster in (r, a, b) order, e.g. for .sdf serialization."""
        return MultibandRaster(np.stack([self.r, self.a, self.b]))


@dataclass(frozen=True)
class MeMap:
    """Per-pixel Euclidean distance from each pixel to its best NCC match."""

    me: np.ndarray

    def __post_init__(self):
        me = np.asarray(self.me, dtype=np.float64)
        if me.ndim != 2:
            raise ShapeMismatchError(f"ME plane must be 2-D, got {me.ndim}-D")
        if me.size and me.min() < 0:
            raise ValueError("matching error must be non-negative")
        me.flags.writeable = False
        object.__setattr__(self, "me", me)

    @property
    def height(self) -> int:
        return self.me.shape[0]

    @property
    def width(self) -> int:
        return self.me.shape[1]

    def to_raster(self) -> MultibandRaster:
        return MultibandRaster(self.me[np.newaxis])


def _box_sum_reflect(plane: np.ndarray, size: int) -> np.ndarray:
    r = size // 2
    padded = np.pad(plane, r, mode="reflect")
    return sliding_window_view(padded, (size, size)).sum(axis=(-2, -1))


def _box_sum_valid(plane: np.ndarray, size: int) -> np.ndarray:
    return sliding_window_view(plane, (size, size)).sum(axis=(-2, -1))


def window_stats(stack1, stack2, center: tuple[int, int], window: int):
    """Two-pass statistics of one window: (cov12, s1, s2, mu1, mu2, n).

    ``center`` is (x, y). Samples are gathered from all depth layers of both
    stacks inside the reflect-padded window; cov and the standard deviations
    use the n - 1 denominator.
    """
    a1, a2 = as_stack(stack1, "stack1"), as_stack(stack2, "stack2")
    check_same_shape(a1, a2, "stacks")
    check_odd_window(window, "window")
    x, y = center
    r = window // 2
    p1 = np.pad(a1, ((0, 0), (r, r), (r, r)), mode="reflect")
    p2 = np.pad(a2, ((0, 0), (r, r), (r, r)), mode="reflect")
    bv1 = p1[:, y : y + window, x : x + window].ravel()
    bv2 = p2[:, y : y + window, x : x + window].ravel()
    n = bv1.size
    mu1, mu2 = bv1.mean(), bv2.mean()
    cov12 = float(((bv1 - mu1) * (bv2 - mu2)).sum() / (n - 1))
    s1 = float(math.sqrt(((bv1 - mu1) ** 2).sum() / (n - 1)))
    s2 = float(math.sqrt(((bv2 - mu2) ** 2).sum() / (n - 1)))
    return cov12, s1, s2, float(mu1), float(mu2), n


def nsci(stack1, stack2, params: NeighborhoodParams | None = None) -> NsciMap:
    """Full-frame NSCI map from two equally shaped stacks.

    Window sums are accumulated per plane and combined into the correlation,
    slope and intercept defined in the module docstring; the result matches
    direct per-window evaluation to within accumulation round-off.
    """
    params = params or NeighborhoodParams()
    a1, a2 = as_stack(stack1, "stack1"), as_stack(stack2, "stack2")
    check_same_shape(a1, a2, "stacks")
    w = params.nsci_window
    n = w * w * a1.shape[0]

    s1_sum = _box_sum_reflect(a1.sum(axis=0), w)
    s2_sum = _box_sum_reflect(a2.sum(axis=0), w)
    q1_sum = _box_sum_reflect((a1 * a1).sum(axis=0), w)
    q2_sum = _box_sum_reflect((a2 * a2).sum(axis=0), w)
    x_sum = _box_sum_reflect((a1 * a2).sum(axis=0), w)

    mu1 = s1_sum / n
    mu2 = s2_sum / n
    cov12 = (x_sum - n * mu1 * mu2) / (n - 1)
    var1 = np.maximum(q1_sum - n * mu1 * mu1, 0.0) / (n - 1)
    var2 = np.maximum(q2_sum - n * mu2 * mu2, 0.0) / (n - 1)
    s1 = np.sqrt(var1)
    s2 = np.sqrt(var2)

    live = s1 * s2 >= params.variance_floor
    r = np.zeros_like(cov12)
    a = np.zeros_like(cov12)
    np.divide(cov12, s1 * s2, out=r, where=live)
    np.divide(cov12, var1, out=a, where=live)
    np.clip(r, -1.0, 1.0, out=r)
    b = (s2_sum - a * s1_sum) / n
    return NsciMap(r, a, b)


def _shift_priority(max_shift: int) -> list[tuple[int, int]]:
    # Argmax tie-break order: nearest to center first, then row-major
    # (v, then u) over the surface grid. sorted() is stable, so equal
    # distances keep their row-major enumeration order.
    shifts = [
        (v, u)
        for v in range(-max_shift, max_shift + 1)
        for u in range(-max_shift, max_shift + 1)
    ]
    return sorted(shifts, key=lambda s: s[0] * s[0] + s[1] * s[1])


def _zncc(template: np.ndarray, patch: np.ndarray, floor: float) -> float:
    t = template - template.mean()
    p = patch - patch.mean()
    denom = math.sqrt(float((t * t).sum()) * float((p * p).sum()))
    if denom < floor:
        return -2.0
    return float((t * p).sum()) / denom


def ncc_surface(feat1, feat2, p: tuple[int, int], params: NeighborhoodParams | None = None) -> np.ndarray:
    """Correlation surface of one pixel: an S x S grid, S = search - template + 1.

    The template block comes from ``feat1`` centered at ``p`` = (x, y); the
    search region comes from ``feat2``. Cell [iv, iu] holds the zero-mean
    normalized cross-correlation at shift (v, u) = (iv - max_shift,
    iu - max_shift), flattened across all depth layers. Shifts whose
    denominator falls below ``variance_floor`` score -2, strictly below the
    NCC range, so any textured shift outranks a flat one.
    """
    params = params or NeighborhoodParams()
    a1, a2 = as_stack(feat1, "feat1"), as_stack(feat2, "feat2")
    check_same_shape(a1, a2, "stacks")
    x, y = p
    tr = params.template // 2
    sr = params.search // 2
    p1 = np.pad(a1, ((0, 0), (tr, tr), (tr, tr)), mode="reflect")
    p2 = np.pad(a2, ((0, 0), (sr, sr), (sr, sr)), mode="reflect")
    template = p1[:, y : y + params.template, x : x + params.template].ravel()
    side = params.surface_side
    surface = np.empty((side, side), dtype=np.float64)
    for iv in range(side):
        v = iv - params.max_shift
        for iu in range(side):
            u = iu - params.max_shift
            # overlap block of the search region under shift (v, u)
            oy = y + sr + v - tr
            ox = x + sr + u - tr
            patch = p2[:, oy : oy + params.template, ox : ox + params.template].ravel()
            surface[iv, iu] = _zncc(template, patch, params.variance_floor)
    return surface


def matching_error(feat1, feat2, params: NeighborhoodParams | None = None) -> MeMap:
    """Full-frame matching error map.

    Per pixel, the argmax of the NCC surface gives the best-match position;
    ME is its Euclidean distance from the pixel. Ties go to the shift
    nearest the center, then to row-major surface order, so a pixel whose
    center shift is among the maxima always reports ME = 0. Pixels where
    every shift is degenerate (all scores -2) also report 0.
    """
    params = params or NeighborhoodParams()
    a1, a2 = as_stack(feat1, "feat1"), as_stack(feat2, "feat2")
    check_same_shape(a1, a2, "stacks")
    depth, height, width = a1.shape
    t = params.template
    tr = t // 2
    sr = params.search // 2
    m = t * t * depth
    floor = params.variance_floor

    p1 = np.pad(a1, ((0, 0), (tr, tr), (tr, tr)), mode="reflect")
    p2 = np.pad(a2, ((0, 0), (sr, sr), (sr, sr)), mode="reflect")

    t_sum = _box_sum_valid(p1.sum(axis=0), t)
    t_sq = _box_sum_valid((p1 * p1).sum(axis=0), t)
    ss_t = np.maximum(t_sq - t_sum * t_sum / m, 0.0)

    best_score = np.full((height, width), -np.inf)
    best_me = np.zeros((height, width))
    pad_h, pad_w = height + 2 * tr, width + 2 * tr
    for v, u in _shift_priority(params.max_shift):
        oy, ox = sr - tr + v, sr - tr + u
        block = p2[:, oy : oy + pad_h, ox : ox + pad_w]
        o_sum = _box_sum_valid(block.sum(axis=0), t)
        o_sq = _box_sum_valid((block * block).sum(axis=0), t)
        cross = _box_sum_valid((p1 * block).sum(axis=0), t)
        ss_o = np.maximum(o_sq - o_sum * o_sum / m, 0.0)
        denom = np.sqrt(ss_t * ss_o)
        live = denom >= floor
        score = np.full((height, width), -2.0)
        np.divide(cross - t_sum * o_sum / m, denom, out=score, where=live)
        better = score > best_score  # strict: earlier (higher-priority) shift wins ties
        best_score[better] = score[better]
        best_me[better] = math.hypot(u, v)
    return MeMap(best_me)


def feature_image(nsci_map: NsciMap, me_map: MeMap) -> np.ndarray:
    """Stack (r, a, b, ME) into the (H, W, 4) per-pixel classifier input."""
    if nsci_map.r.shape != me_map.me.shape:
        raise ShapeMismatchError(
            f"NSCI {nsci_map.r.shape} and ME {me_map.me.shape} maps differ in shape"
        )
    return np.stack([nsci_map.r, nsci_map.a, nsci_map.b, me_map.me], axis=-1)


class NeighborhoodFeatureExtractor(BaseEstimator, TransformerMixin):
    """Transformer from a bi-temporal stack pair to the (H, W, 4) features.

    ``transform`` accepts either a (2, depth, H, W) array or a two-element
    sequence of stacks and returns the stacked (r, a, b, ME) feature image.
    """

    def __init__(
        self,
        nsci_window: int = 5,
        template: int = 3,
        search: int = 9,
        variance_floor: float = 1e-12,
    ):
        self.nsci_window = nsci_window
        self.template = template
        self.search = search
        self.variance_floor = variance_floor

    def _params(self) -> NeighborhoodParams:
        return NeighborhoodParams(
            self.nsci_window, self.template, self.search, self.variance_floor
        )

    def fit(self, X, y=None):
        self._params()
        return self

    def transform(self, X) -> np.ndarray:
        if len(X) != 2:
            raise ShapeMismatchError("expected a pair of stacks")
        stack1, stack2 = X[0], X[1]
        params = self._params()
        return feature_image(
            nsci(stack1, stack2, params), matching_error(stack1, stack2, params)
        )
