"""Multiband rasters: the MBRF container, min-max normalization, PGM export."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError, ShapeError, TruncatedFileError

MAGIC = b"MBR1"
VERSION = 1
DTYPE_F32 = 0
_HEADER = struct.Struct("<4sIIIII")

DEFAULT_BAND_NAMES = ("blue", "green", "red", "red_edge", "nir")


def _check_finite(data: np.ndarray) -> None:
    bad = ~np.isfinite(data)
    if bad.any():
        band, row, col = (int(i) for i in np.argwhere(bad)[0])
        raise DataError(
            f"non-finite sample in band {band} at pixel {row * data.shape[2] + col} "
            f"(row {row}, col {col})"
        )


@dataclass
class MultibandRaster:
    """H x W x C float image stored band-major as a (bands, height, width) float32 array."""

    data: np.ndarray
    band_names: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 3:
            raise ShapeError(f"raster data must be (bands, height, width), got shape {data.shape}")
        if min(data.shape) < 1:
            raise ShapeError(f"raster dims must be >= 1, got {data.shape}")
        _check_finite(data)
        self.data = np.ascontiguousarray(data)
        if self.band_names is not None:
            self.band_names = tuple(self.band_names)
            if len(self.band_names) != data.shape[0]:
                raise ShapeError(
                    f"{len(self.band_names)} band names for {data.shape[0]} bands"
                )

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


def save_raster(raster: MultibandRaster, path: str | Path) -> None:
    _check_finite(raster.data)
    header = _HEADER.pack(MAGIC, VERSION, raster.width, raster.height, raster.bands, DTYPE_F32)
    payload = raster.data.astype("<f4", copy=False).tobytes(order="C")
    Path(path).write_bytes(header + payload)


def load_raster(path: str | Path) -> MultibandRaster:
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise FormatError(f"{path}: {len(blob)} bytes is shorter than the MBRF header")
    magic, version, width, height, bands, dtype = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported MBRF version {version}")
    if dtype != DTYPE_F32:
        raise FormatError(f"{path}: unsupported dtype code {dtype}")
    if min(width, height, bands) < 1:
        raise FormatError(f"{path}: zero dimension in header ({width}x{height}x{bands})")
    expected = width * height * bands * 4
    payload = blob[_HEADER.size:]
    if len(payload) < expected:
        raise TruncatedFileError(
            f"{path}: payload has {len(payload)} bytes, header declares {expected}"
        )
    if len(payload) > expected:
        raise FormatError(f"{path}: {len(payload) - expected} trailing bytes after payload")
    data = np.frombuffer(payload, dtype="<f4").reshape(bands, height, width)
    return MultibandRaster(data.astype(np.float32))


@dataclass(frozen=True)
class NormalizationStats:
    minimum: np.ndarray
    maximum: np.ndarray = field()

    def __post_init__(self) -> None:
        lo = np.asarray(self.minimum, dtype=np.float64).reshape(-1)
        hi = np.asarray(self.maximum, dtype=np.float64).reshape(-1)
        if lo.shape != hi.shape:
            raise ShapeError(f"{lo.size} minima for {hi.size} maxima")
        if not np.all(lo < hi):
            band = int(np.argmax(~(lo < hi)))
            raise DataError(f"band {band} is constant or inverted (min {lo[band]}, max {hi[band]})")
        object.__setattr__(self, "minimum", lo)
        object.__setattr__(self, "maximum", hi)

    @property
    def bands(self) -> int:
        return self.minimum.size

    @classmethod
    def from_arrays(cls, *arrays: np.ndarray) -> "NormalizationStats":
        """Per-band range over one or more (..., bands, H, W) arrays."""
        lo = hi = None
        for arr in arrays:
            arr = np.asarray(arr)
            flat = np.moveaxis(arr, -3, 0).reshape(arr.shape[-3], -1)
            a_lo, a_hi = flat.min(axis=1), flat.max(axis=1)
            lo = a_lo if lo is None else np.minimum(lo, a_lo)
            hi = a_hi if hi is None else np.maximum(hi, a_hi)
        if lo is None:
            raise ShapeError("no arrays given")
        return cls(lo, hi)

    @classmethod
    def from_raster(cls, raster: MultibandRaster) -> "NormalizationStats":
        return cls.from_arrays(raster.data)

    def apply(self, data: np.ndarray) -> np.ndarray:
        """Map (..., bands, H, W) samples to [0, 1] per band, clamping out-of-range values."""
        data = np.asarray(data)
        if data.shape[-3] != self.bands:
            raise ShapeError(f"data has {data.shape[-3]} bands, stats have {self.bands}")
        lo = self.minimum[:, None, None]
        span = (self.maximum - self.minimum)[:, None, None]
        out = np.clip((data - lo) / span, 0.0, 1.0)
        return out.astype(np.float32)

    def invert(self, data: np.ndarray) -> np.ndarray:
        data = np.asarray(data)
        if data.shape[-3] != self.bands:
            raise ShapeError(f"data has {data.shape[-3]} bands, stats have {self.bands}")
        lo = self.minimum[:, None, None]
        span = (self.maximum - self.minimum)[:, None, None]
        return (data.astype(np.float64) * span + lo).astype(np.float32)


def normalize(raster: MultibandRaster, stats: NormalizationStats) -> MultibandRaster:
    return MultibandRaster(stats.apply(raster.data), raster.band_names)


def denormalize(raster: MultibandRaster, stats: NormalizationStats) -> MultibandRaster:
    return MultibandRaster(stats.invert(raster.data), raster.band_names)


def band_to_grayscale(raster: MultibandRaster, band: int, path: str | Path) -> np.ndarray:
    """Write one band as an 8-bit binary PGM scaled from the band's own range.

    A constant band maps to 0. Returns the written gray levels.
    """
    if not 0 <= band < raster.bands:
        raise IndexError(f"band {band} out of range for {raster.bands}-band raster")
    values = raster.data[band].astype(np.float64)
    lo, hi = values.min(), values.max()
    if hi > lo:
        gray = np.floor((values - lo) / (hi - lo) * 255.0 + 0.5)
    else:
        gray = np.zeros_like(values)
    gray = np.clip(gray, 0, 255).astype(np.uint8)
    header = f"P5\n{raster.width} {raster.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + gray.tobytes())
    return gray


def read_pgm(path: str | Path) -> np.ndarray:
    blob = Path(path).read_bytes()
    parts = blob.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM")
    width, height, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise FormatError(f"{path}: maxval {maxval} unsupported")
    pixels = blob[len(blob) - width * height:]
    return np.frombuffer(pixels, dtype=np.uint8).reshape(height, width)
