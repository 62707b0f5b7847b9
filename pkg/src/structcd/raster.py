"""Multiband raster and binary mask I/O.

Rasters are stored band-major: ``data`` has shape ``(bands, height, width)``
with each band plane row-major and contiguous, so windowed kernels stream one
plane at a time. Samples are float64 in memory; the integer image formats
(PGM, PNG, TIFF) decode to exact float values, and the ``.sdf`` sidecar holds
IEEE-754 little-endian float32 so intermediate maps survive a save/load round
trip without 8-bit quantization.

Supported containers:

* PGM  -- P5 (binary) and P2 (ASCII), 8- or 16-bit (16-bit is big-endian
  per the Netpbm convention). Written as 8-bit P5.
* PNG  -- 8/16-bit grayscale, RGB, RGBA (via Pillow). Written as 8-bit.
* TIFF -- uncompressed, single-strip, chunky (interleaved), 8/16-bit
  unsigned, any band count. Own minimal codec; compressed or multi-strip
  files are rejected with the offending feature named.
* SDF  -- raw-float sidecar: header line ``SDF1 <width> <height> <bands>\\n``
  followed by width*height*bands little-endian float32 in band-major,
  row-major order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .validation import RasterFormatError, ShapeMismatchError, check_finite

SDF_MAGIC = b"SDF1"

SCALING_MODES = ("clamp-to-8bit", "normalize-to-8bit", "raw-float")


@dataclass(frozen=True)
class MultibandRaster:
    """A width x height x bands grid of real-valued samples.

    ``data`` is float64 with shape ``(bands, height, width)``. Instances are
    immutable and safe to share across workers.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.data, dtype=np.float64))
        if arr.ndim != 3:
            raise ShapeMismatchError(
                f"raster data must be (bands, height, width), got {arr.ndim}-D"
            )
        if min(arr.shape) < 1:
            raise ValueError(f"raster dimensions must be >= 1, got {arr.shape}")
        check_finite(arr, "raster data")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def band(self, i: int) -> np.ndarray:
        return self.data[i]


@dataclass(frozen=True)
class BinaryMask:
    """Per-pixel class labels: 0 = unchanged, 1 = changed."""

    labels: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.labels))
        if arr.ndim != 2:
            raise ShapeMismatchError(f"mask must be 2-D, got {arr.ndim}-D")
        if not np.isin(arr, (0, 1)).all():
            raise ValueError("mask labels must be exactly {0, 1}")
        arr = arr.astype(np.uint8)
        arr.flags.writeable = False
        object.__setattr__(self, "labels", arr)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def changed_count(self) -> int:
        return int(self.labels.sum())

    def to_raster(self) -> MultibandRaster:
        """0/255 single-band raster (changed = white), for visualization."""
        return MultibandRaster((self.labels * 255.0)[np.newaxis])


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------


def load_raster(path) -> MultibandRaster:
    """Load an image file into a MultibandRaster.

    The container is detected from the file's magic bytes, not its
    extension. Sample values are preserved exactly (integers decode to the
    same real value; SDF floats widen losslessly).
    """
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise OSError(f"{path}: truncated file ({len(raw)} bytes)")
    if raw[:2] in (b"P5", b"P2"):
        planes = _decode_pgm(raw, str(path))
    elif raw[:8] == b"\x89PNG\r\n\x1a\n":
        planes = _decode_png(path)
    elif raw[:2] in (b"II", b"MM"):
        planes = _decode_tiff(raw, str(path))
    elif raw[:4] == SDF_MAGIC:
        planes = _decode_sdf(raw, str(path))
    else:
        raise RasterFormatError(
            f"{path}: unrecognized format (magic bytes {raw[:4]!r})"
        )
    if not np.isfinite(planes).all():
        raise RasterFormatError(f"{path}: file contains non-finite samples")
    return MultibandRaster(planes)


def _decode_pgm(raw: bytes, path: str) -> np.ndarray:
    magic = raw[:2]
    # Header tokens (width, height, maxval) separated by whitespace, with
    # '#' comments running to end of line.
    pos = 2
    tokens = []
    while len(tokens) < 3:
        if pos >= len(raw):
            raise OSError(f"{path}: truncated PGM header")
        c = raw[pos : pos + 1]
        if c == b"#":
            nl = raw.find(b"\n", pos)
            pos = len(raw) if nl < 0 else nl + 1
        elif c.isspace():
            pos += 1
        else:
            end = pos
            while end < len(raw) and not raw[end : end + 1].isspace():
                end += 1
            tokens.append(raw[pos:end])
            pos = end
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise RasterFormatError(f"{path}: malformed PGM header") from None
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise RasterFormatError(f"{path}: bad PGM dimensions/maxval")
    if magic == b"P2":
        values = raw[pos:].split()
        if len(values) < width * height:
            raise OSError(f"{path}: truncated PGM payload")
        arr = np.array(values[: width * height], dtype=np.float64)
    else:
        pos += 1  # single whitespace byte after maxval
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        need = width * height * dtype.itemsize
        payload = raw[pos : pos + need]
        if len(payload) < need:
            raise OSError(f"{path}: truncated PGM payload")
        arr = np.frombuffer(payload, dtype=dtype).astype(np.float64)
    return arr.reshape(1, height, width)


def _decode_png(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as img:
        mode = img.mode
        if mode == "P":
            raise RasterFormatError(f"{path}: palette-indexed PNG is not supported")
        if mode not in ("L", "I", "I;16", "RGB", "RGBA"):
            raise RasterFormatError(f"{path}: unsupported PNG mode {mode!r}")
        arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        return arr[np.newaxis]
    # (H, W, C) -> (C, H, W), plane order R, G, B[, A]
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


_TIFF_TYPE_SIZE = {1: 1, 2: 1, 3: 2, 4: 4, 5: 8}


def _decode_tiff(raw: bytes, path: str) -> np.ndarray:
    bo = "<" if raw[:2] == b"II" else ">"
    magic, ifd_off = struct.unpack(bo + "HI", raw[2:8])
    if magic != 42:
        raise RasterFormatError(f"{path}: not a TIFF (magic {magic})")

    def read_entry(off):
        tag, typ, count = struct.unpack(bo + "HHI", raw[off : off + 8])
        size = _TIFF_TYPE_SIZE.get(typ, 0) * count
        if size == 0:
            return tag, ()
        if size <= 4:
            payload = raw[off + 8 : off + 8 + size]
        else:
            (value_off,) = struct.unpack(bo + "I", raw[off + 8 : off + 12])
            payload = raw[value_off : value_off + size]
        if typ == 3:
            values = struct.unpack(bo + f"{count}H", payload)
        elif typ == 4:
            values = struct.unpack(bo + f"{count}I", payload)
        elif typ == 1:
            values = tuple(payload)
        else:
            values = ()
        return tag, values

    if ifd_off + 2 > len(raw):
        raise OSError(f"{path}: truncated TIFF (no IFD)")
    (n_entries,) = struct.unpack(bo + "H", raw[ifd_off : ifd_off + 2])
    tags = {}
    for i in range(n_entries):
        tag, values = read_entry(ifd_off + 2 + 12 * i)
        tags[tag] = values

    def one(tag, default=None):
        v = tags.get(tag)
        if v is None or not v:
            if default is None:
                raise RasterFormatError(f"{path}: TIFF missing required tag {tag}")
            return default
        return v[0]

    width, height = one(256), one(257)
    compression = one(259, 1)
    if compression != 1:
        raise RasterFormatError(
            f"{path}: TIFF compression {compression} unsupported (only 1 = none)"
        )
    samples = one(277, 1)
    planar = one(284, 1)
    if planar != 1:
        raise RasterFormatError(
            f"{path}: TIFF planar configuration {planar} unsupported (only 1 = chunky)"
        )
    sample_format = one(339, 1)
    if sample_format != 1:
        raise RasterFormatError(
            f"{path}: TIFF sample format {sample_format} unsupported (only 1 = unsigned)"
        )
    bits = tags.get(258, (8,))
    if len(set(bits)) != 1 or bits[0] not in (8, 16):
        raise RasterFormatError(f"{path}: TIFF bits-per-sample {bits} unsupported")
    offsets = tags.get(273, ())
    counts = tags.get(279, ())
    if len(offsets) != 1:
        raise RasterFormatError(
            f"{path}: multi-strip TIFF unsupported ({len(offsets)} strips)"
        )
    dtype = np.dtype(bo + ("u2" if bits[0] == 16 else "u1"))
    need = width * height * samples * dtype.itemsize
    if counts and counts[0] < need:
        raise OSError(f"{path}: TIFF strip shorter than image ({counts[0]} < {need})")
    payload = raw[offsets[0] : offsets[0] + need]
    if len(payload) < need:
        raise OSError(f"{path}: truncated TIFF payload")
    arr = np.frombuffer(payload, dtype=dtype).astype(np.float64)
    arr = arr.reshape(height, width, samples)
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def _decode_sdf(raw: bytes, path: str) -> np.ndarray:
    nl = raw.find(b"\n")
    if nl < 0:
        raise OSError(f"{path}: truncated SDF header")
    fields = raw[:nl].split()
    if len(fields) != 4 or fields[0] != SDF_MAGIC:
        raise RasterFormatError(f"{path}: malformed SDF header {raw[:nl]!r}")
    try:
        width, height, bands = (int(f) for f in fields[1:])
    except ValueError:
        raise RasterFormatError(f"{path}: malformed SDF header {raw[:nl]!r}") from None
    if width < 1 or height < 1 or bands < 1:
        raise RasterFormatError(f"{path}: bad SDF dimensions {width}x{height}x{bands}")
    need = width * height * bands * 4
    payload = raw[nl + 1 : nl + 1 + need]
    if len(payload) < need:
        raise OSError(f"{path}: truncated SDF payload ({len(payload)} < {need} bytes)")
    arr = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    return arr.reshape(bands, height, width)


# ---------------------------------------------------------------------------
# saving
# ---------------------------------------------------------------------------


def save_raster(raster: MultibandRaster, path, scaling: str) -> None:
    """Write a raster to disk.

    ``scaling`` selects the sample encoding:

    * ``clamp-to-8bit``     -- round, clip to [0, 255], store as 8-bit.
    * ``normalize-to-8bit`` -- affine map of the raster's global [min, max]
      onto [0, 255] (a constant raster maps to all zeros), store as 8-bit.
    * ``raw-float``         -- the SDF sidecar format (float32), lossless for
      float32-representable samples. Conventionally saved with a ``.sdf``
      extension.

    The 8-bit container is chosen by extension: ``.pgm`` (single band),
    ``.png`` (1/3/4 bands), ``.tif``/``.tiff`` (any band count).
    """
    if scaling not in SCALING_MODES:
        raise ValueError(f"unknown scaling mode {scaling!r}, expected {SCALING_MODES}")
    path = Path(path)
    if scaling == "raw-float":
        _write_sdf(raster, path)
        return
    if scaling == "clamp-to-8bit":
        data8 = np.clip(np.rint(raster.data), 0, 255).astype(np.uint8)
    else:
        lo, hi = float(raster.data.min()), float(raster.data.max())
        if hi > lo:
            scaled = (raster.data - lo) * (255.0 / (hi - lo))
        else:
            scaled = np.zeros_like(raster.data)
        data8 = np.rint(scaled).astype(np.uint8)

    suffix = path.suffix.lower()
    if suffix == ".pgm":
        if raster.bands != 1:
            raise RasterFormatError(f"PGM holds one band, raster has {raster.bands}")
        _write_pgm(data8[0], path)
    elif suffix == ".png":
        _write_png(data8, path)
    elif suffix in (".tif", ".tiff"):
        _write_tiff(data8, path)
    elif suffix == ".sdf":
        raise RasterFormatError(".sdf files are written with scaling='raw-float'")
    else:
        raise RasterFormatError(f"no 8-bit writer for extension {suffix!r}")


def _write_sdf(raster: MultibandRaster, path: Path) -> None:
    header = f"SDF1 {raster.width} {raster.height} {raster.bands}\n".encode("ascii")
    payload = raster.data.astype("<f4").tobytes()
    path.write_bytes(header + payload)


def _write_pgm(plane8: np.ndarray, path: Path) -> None:
    header = f"P5\n{plane8.shape[1]} {plane8.shape[0]}\n255\n".encode("ascii")
    path.write_bytes(header + plane8.tobytes())


def _write_png(data8: np.ndarray, path: Path) -> None:
    from PIL import Image

    bands = data8.shape[0]
    if bands == 1:
        img = Image.fromarray(data8[0], mode="L")
    elif bands in (3, 4):
        img = Image.fromarray(
            np.ascontiguousarray(data8.transpose(1, 2, 0)),
            mode="RGB" if bands == 3 else "RGBA",
        )
    else:
        raise RasterFormatError(f"PNG holds 1, 3 or 4 bands, raster has {bands}")
    img.save(path, format="PNG")


def _write_tiff(data8: np.ndarray, path: Path) -> None:
    # Minimal uncompressed single-strip chunky TIFF, little-endian, 8-bit.
    bands, height, width = data8.shape
    # Photometric: RGB for 3/4 bands so mainstream readers map the samples;
    # grayscale otherwise (band counts they would not open anyway).
    photometric = 2 if bands in (3, 4) else 1
    tags = [
        (256, 4, 1, width),
        (257, 4, 1, height),
        (258, 3, bands, None),  # BitsPerSample, may need an offset array
        (259, 3, 1, 1),
        (262, 3, 1, photometric),
        (273, 4, 1, None),  # StripOffsets, patched below
        (277, 3, 1, bands),
        (278, 4, 1, height),
        (279, 4, 1, width * height * bands),
        (284, 3, 1, 1),
    ]
    if bands == 4:
        tags.append((338, 3, 1, 2))  # ExtraSamples: unassociated alpha
    ifd_off = 8
    ifd_size = 2 + 12 * len(tags) + 4
    extra_off = ifd_off + ifd_size
    extra = b""
    if bands > 2:
        bits_value = extra_off
        extra = struct.pack(f"<{bands}H", *([8] * bands))
    else:
        bits_value = None
    strip_off = extra_off + len(extra)

    out = bytearray()
    out += struct.pack("<2sHI", b"II", 42, ifd_off)
    out += struct.pack("<H", len(tags))
    for tag, typ, count, value in tags:
        if tag == 258:
            if bands > 2:
                out += struct.pack("<HHII", tag, typ, count, bits_value)
            else:
                packed = struct.pack(f"<{bands}H", *([8] * bands)).ljust(4, b"\x00")
                out += struct.pack("<HHI", tag, typ, count) + packed
        elif tag == 273:
            out += struct.pack("<HHII", tag, typ, count, strip_off)
        elif typ == 3:
            out += struct.pack("<HHIHH", tag, typ, count, value, 0)
        else:
            out += struct.pack("<HHII", tag, typ, count, value)
    out += struct.pack("<I", 0)  # no next IFD
    out += extra
    out += np.ascontiguousarray(data8.transpose(1, 2, 0)).tobytes()
    path.write_bytes(bytes(out))


# ---------------------------------------------------------------------------
# derived rasters
# ---------------------------------------------------------------------------


def to_intensity(raster: MultibandRaster) -> MultibandRaster:
    """Reduce to a single band: per-pixel unweighted mean across bands.

    The reduction channel for descriptor extraction is configurable at the
    pipeline level; this symmetric mean is the default.
    """
    if raster.bands == 1:
        return MultibandRaster(raster.data.copy())
    return MultibandRaster(raster.data.mean(axis=0, keepdims=True))


def load_mask(path, threshold: float | None = None) -> BinaryMask:
    """Load a single-band image as a binary mask.

    Samples strictly greater than ``threshold`` become 1 (changed). The
    default threshold is half the image's maximum sample value.
    """
    raster = load_raster(path)
    if raster.bands != 1:
        raise RasterFormatError(
            f"{path}: mask must be single-band, got {raster.bands} bands"
        )
    plane = raster.data[0]
    if threshold is None:
        threshold = 0.5 * float(plane.max())
    return BinaryMask((plane > threshold).astype(np.uint8))
