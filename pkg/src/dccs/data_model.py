"""Core array-valued domain types, validation, ROI extraction and file I/O.

Conventions used everywhere in this package:

* dynamic data is stored frame-major as an (nt, ny, nx) array, complex128
  in memory, complex64 (interleaved little-endian float32 pairs) on disk;
* displacement fields carry two (nt, ny, nx) float planes, dx along the x
  (column) axis and dy along the y (row) axis, in pixel units;
* all domain objects are immutable after construction (their arrays are
  marked read-only) and may be shared freely across threads.

Binary formats: every file starts with an 8-byte ASCII magic, then a
4-byte little-endian uint32 header length, then that many bytes of UTF-8
JSON, then the raw payload.  "DCD1" datasets use magic ``DCCSDAT1``,
"DCF1" deformation fields ``DCCSDEF1`` (dx plane then dy plane per frame,
float32), "DCK1" k-space files ``DCCSKSP1`` (packbits mask followed by
complex64 samples).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FileFormatError, RoiOutOfBounds, ShapeMismatch

MAGIC_DATASET = b"DCCSDAT1"
MAGIC_FIELD = b"DCCSDEF1"
MAGIC_KSPACE = b"DCCSKSP1"


def _freeze(obj, name, arr):
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    object.__setattr__(obj, name, arr)
    return arr


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} contains NaN or Inf entries")


@dataclass(frozen=True, eq=False)
class DynamicDataset:
    """Complex-valued image series on an nx*ny*nt grid, frame-major."""

    values: np.ndarray
    pixel_spacing: float = 1.0

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.complex128)
        if vals.ndim != 3 or min(vals.shape) < 1:
            raise ValueError(f"values must be (nt, ny, nx) with all dims >= 1, got {vals.shape}")
        _check_finite(vals, "dataset values")
        _freeze(self, "values", vals)

    @property
    def nt(self) -> int:
        return self.values.shape[0]

    @property
    def ny(self) -> int:
        return self.values.shape[1]

    @property
    def nx(self) -> int:
        return self.values.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape

    def magnitude(self) -> np.ndarray:
        return np.abs(self.values)

    def with_values(self, values) -> "DynamicDataset":
        return DynamicDataset(values, self.pixel_spacing)


@dataclass(frozen=True, eq=False)
class DeformationField:
    """Per-frame, per-pixel displacements in pixel units; zero means identity."""

    dx: np.ndarray
    dy: np.ndarray

    def __post_init__(self):
        dx = np.asarray(self.dx, dtype=np.float64)
        dy = np.asarray(self.dy, dtype=np.float64)
        if dx.ndim != 3 or dx.shape != dy.shape:
            raise ShapeMismatch(f"dx/dy must be matching (nt, ny, nx) arrays, got {dx.shape} vs {dy.shape}")
        _check_finite(dx, "dx")
        _check_finite(dy, "dy")
        _freeze(self, "dx", dx)
        _freeze(self, "dy", dy)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.dx.shape

    def is_zero(self) -> bool:
        return not (self.dx.any() or self.dy.any())

    @staticmethod
    def zeros(nt: int, ny: int, nx: int) -> "DeformationField":
        z = np.zeros((nt, ny, nx))
        return DeformationField(z, z.copy())


@dataclass(frozen=True, eq=False)
class SamplingPattern:
    """Binary k-space mask per frame, in DC-centered layout."""

    mask: np.ndarray
    rays_per_frame: int = 0
    angle_increment: float = 0.0

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        if mask.ndim != 3 or min(mask.shape) < 1:
            raise ValueError(f"mask must be (nt, ny, nx), got {mask.shape}")
        _freeze(self, "mask", mask)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.mask.shape

    @property
    def n_samples(self) -> int:
        return int(self.mask.sum())

    def sampled_fraction(self) -> np.ndarray:
        """Fraction of k-space cells sampled, per frame."""
        nt, ny, nx = self.mask.shape
        return self.mask.reshape(nt, -1).sum(axis=1) / float(ny * nx)


@dataclass(frozen=True, eq=False)
class KSpaceData:
    """Measured k-space samples on the pattern's support, frame-ordered."""

    samples: np.ndarray
    pattern: SamplingPattern
    noise_sigma: float = 0.0

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.complex128).ravel()
        if samples.size != self.pattern.n_samples:
            raise ShapeMismatch(
                f"sample count {samples.size} != mask true-count {self.pattern.n_samples}"
            )
        _check_finite(samples, "k-space samples")
        _freeze(self, "samples", samples)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.pattern.shape


@dataclass(frozen=True)
class Roi:
    """Axis-aligned pixel rectangle; (x0, y0) is the top-left corner."""

    x0: int
    y0: int
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1 or self.x0 < 0 or self.y0 < 0:
            raise RoiOutOfBounds(f"degenerate ROI {self}")

    def check_inside(self, nx: int, ny: int) -> None:
        if self.x0 + self.width > nx or self.y0 + self.height > ny:
            raise RoiOutOfBounds(f"ROI {self} exceeds {nx}x{ny} grid")

    def slices(self) -> tuple[slice, slice]:
        return slice(self.y0, self.y0 + self.height), slice(self.x0, self.x0 + self.width)

    def to_dict(self) -> dict:
        return {"x0": self.x0, "y0": self.y0, "width": self.width, "height": self.height}

    @staticmethod
    def from_dict(d: dict) -> "Roi":
        return Roi(int(d["x0"]), int(d["y0"]), int(d["width"]), int(d["height"]))


def extract_roi(d: DynamicDataset, r: Roi) -> DynamicDataset:
    """Crop a dataset to an ROI rectangle; values are copied verbatim."""
    r.check_inside(d.nx, d.ny)
    sy, sx = r.slices()
    return DynamicDataset(d.values[:, sy, sx].copy(), d.pixel_spacing)


# ---------------------------------------------------------------------------
# binary file I/O


def _write_chunks(path, magic: bytes, header: dict, payload: bytes) -> None:
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(payload)


def _read_chunks(path, magic: bytes):
    with open(path, "rb") as fh:
        got = fh.read(8)
        if got != magic:
            raise FileFormatError(f"{path}: expected magic {magic!r}, found {got!r}")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        payload = fh.read()
    return header, payload


def save_dataset(d: DynamicDataset, path) -> None:
    header = {"nx": d.nx, "ny": d.ny, "nt": d.nt, "dtype": "c64", "pixel_spacing": d.pixel_spacing}
    _write_chunks(path, MAGIC_DATASET, header, d.values.astype("<c8").tobytes())


def load_dataset(path) -> DynamicDataset:
    header, payload = _read_chunks(path, MAGIC_DATASET)
    nt, ny, nx = header["nt"], header["ny"], header["nx"]
    vals = np.frombuffer(payload, dtype="<c8", count=nt * ny * nx).reshape(nt, ny, nx)
    return DynamicDataset(vals.astype(np.complex128), float(header.get("pixel_spacing", 1.0)))


def save_field(theta: DeformationField, path) -> None:
    nt, ny, nx = theta.shape
    header = {"nx": nx, "ny": ny, "nt": nt, "dtype": "f32"}
    planes = np.stack([theta.dx, theta.dy], axis=1)  # (nt, 2, ny, nx): dx plane then dy plane
    _write_chunks(path, MAGIC_FIELD, header, planes.astype("<f4").tobytes())


def load_field(path) -> DeformationField:
    header, payload = _read_chunks(path, MAGIC_FIELD)
    nt, ny, nx = header["nt"], header["ny"], header["nx"]
    planes = np.frombuffer(payload, dtype="<f4", count=nt * 2 * ny * nx).reshape(nt, 2, ny, nx)
    return DeformationField(planes[:, 0].astype(np.float64), planes[:, 1].astype(np.float64))


def save_kspace(b: KSpaceData, path) -> None:
    nt, ny, nx = b.shape
    header = {
        "nx": nx,
        "ny": ny,
        "nt": nt,
        "n_samples": int(b.samples.size),
        "noise_sigma": b.noise_sigma,
        "rays_per_frame": b.pattern.rays_per_frame,
        "angle_increment": b.pattern.angle_increment,
        "dtype": "c64",
    }
    payload = np.packbits(b.pattern.mask.ravel()).tobytes() + b.samples.astype("<c8").tobytes()
    _write_chunks(path, MAGIC_KSPACE, header, payload)


def load_kspace(path) -> KSpaceData:
    header, payload = _read_chunks(path, MAGIC_KSPACE)
    nt, ny, nx = header["nt"], header["ny"], header["nx"]
    nbits = nt * ny * nx
    nbytes = (nbits + 7) // 8
    bits = np.unpackbits(np.frombuffer(payload[:nbytes], dtype=np.uint8), count=nbits)
    mask = bits.astype(bool).reshape(nt, ny, nx)
    pattern = SamplingPattern(mask, int(header.get("rays_per_frame", 0)),
                              float(header.get("angle_increment", 0.0)))
    samples = np.frombuffer(payload[nbytes:], dtype="<c8", count=header["n_samples"])
    return KSpaceData(samples.astype(np.complex128), pattern, float(header.get("noise_sigma", 0.0)))
