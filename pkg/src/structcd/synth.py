"""Seeded synthetic bi-temporal scene generator.

Produces (t1, t2, truth) triples for experiments and tests: t1 is a smoothed
white-noise texture per band scaled to [0, 255]; t2 applies a global
radiometric distortion gain * t1 + bias plus per-pixel Gaussian sensor
noise; each change region's pixels are then replaced with an independently
drawn texture offset by the region's delta. Replacement — not a brightness
offset — is deliberate: structure features cannot (and should not) see a
pure radiometric shift, so a meaningful "change" must alter local structure.

Everything is drawn from one PCG64 stream in a fixed order (t1 noise, t2
noise, replacement noise), so a SceneSpec maps to exactly one triple, bit
for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cfog import gaussian_smooth
from .raster import BinaryMask, MultibandRaster


@dataclass(frozen=True)
class ChangeRegion:
    """One injected change: an axis-aligned square or a disk.

    ``center`` is (cx, cy); ``size`` is the square side or disk diameter in
    pixels; ``delta`` is added to the replacement texture inside the region.
    """

    shape: str
    center: tuple[int, int]
    size: int
    delta: float = 0.0

    def __post_init__(self):
        if self.shape not in ("rect", "disk"):
            raise ValueError(f"region shape must be 'rect' or 'disk', got {self.shape!r}")
        if self.size < 1:
            raise ValueError(f"region size must be >= 1, got {self.size}")

    def rasterize(self, height: int, width: int) -> np.ndarray:
        """Boolean membership plane; raises if the region leaves the image."""
        cx, cy = self.center
        if self.shape == "rect":
            x0, y0 = cx - self.size // 2, cy - self.size // 2
            x1, y1 = x0 + self.size, y0 + self.size
            if x0 < 0 or y0 < 0 or x1 > width or y1 > height:
                raise ValueError(
                    f"rect region at ({cx}, {cy}) size {self.size} leaves the "
                    f"{width}x{height} image"
                )
            plane = np.zeros((height, width), dtype=bool)
            plane[y0:y1, x0:x1] = True
            return plane
        radius = self.size / 2.0
        reach = math.ceil(radius)
        if cx - reach < 0 or cy - reach < 0 or cx + reach >= width or cy + reach >= height:
            raise ValueError(
                f"disk region at ({cx}, {cy}) diameter {self.size} leaves the "
                f"{width}x{height} image"
            )
        yy, xx = np.mgrid[0:height, 0:width]
        return (xx - cx) ** 2 + (yy - cy) ** 2 <= radius * radius


@dataclass(frozen=True)
class SceneSpec:
    """Full description of one synthetic scene."""

    width: int = 256
    height: int = 256
    bands: int = 3
    texture_scale: float = 2.0
    gain: float = 1.0
    bias: float = 0.0
    noise_sigma: float = 0.0
    changes: tuple[ChangeRegion, ...] = field(default_factory=tuple)
    seed: int = 0

    def __post_init__(self):
        if self.width < 3 or self.height < 3:
            raise ValueError("scene must be at least 3x3 pixels")
        if self.bands < 1:
            raise ValueError("bands must be >= 1")
        if not self.texture_scale > 0:
            raise ValueError("texture_scale must be > 0")
        if not self.gain > 0:
            raise ValueError("gain must be > 0")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")
        object.__setattr__(self, "changes", tuple(self.changes))


def _texture(rng: np.random.Generator, spec: SceneSpec) -> np.ndarray:
    """Smoothed white noise per band, min-max scaled to [0, 255]."""
    out = np.empty((spec.bands, spec.height, spec.width))
    for b in range(spec.bands):
        plane = gaussian_smooth(
            rng.standard_normal((spec.height, spec.width)), spec.texture_scale
        )
        lo, hi = plane.min(), plane.max()
        out[b] = (plane - lo) * (255.0 / (hi - lo)) if hi > lo else 0.0
    return out


def generate(spec: SceneSpec) -> tuple[MultibandRaster, MultibandRaster, BinaryMask]:
    """Render a scene spec into (t1, t2, truth).

    Overlapping change regions are allowed; later regions paint over
    earlier ones and truth is their union.
    """
    rng = np.random.default_rng(spec.seed)
    base = _texture(rng, spec)
    t2 = spec.gain * base + spec.bias + rng.normal(
        0.0, spec.noise_sigma, size=base.shape
    )

    truth = np.zeros((spec.height, spec.width), dtype=np.uint8)
    if spec.changes:
        replacement = _texture(rng, spec)
        for region in spec.changes:
            member = region.rasterize(spec.height, spec.width)
            t2[:, member] = replacement[:, member] + region.delta
            truth[member] = 1
    return MultibandRaster(base), MultibandRaster(t2), BinaryMask(truth)


def acceptance_scene() -> SceneSpec:
    """The fixed benchmark scene for end-to-end comparisons.

    256x256, 4 bands, the gain-1.3/bias-15 radiometric distortion plus
    sigma-5 sensor noise, and five structural change regions covering about
    8% of the frame.
    """
    return SceneSpec(
        width=256,
        height=256,
        bands=4,
        texture_scale=2.0,
        gain=1.3,
        bias=15.0,
        noise_sigma=5.0,
        changes=(
            ChangeRegion("rect", (60, 60), 40, delta=40.0),
            ChangeRegion("rect", (180, 50), 30, delta=-35.0),
            ChangeRegion("disk", (70, 180), 40, delta=30.0),
            ChangeRegion("disk", (190, 190), 30, delta=-25.0),
            ChangeRegion("rect", (128, 120), 28, delta=45.0),
        ),
        seed=42,
    )
