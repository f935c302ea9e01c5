"""Undersampled Fourier measurement operator, its adjoint, and mask generation.

The per-frame 2-D DFT is unitary (orthonormal, 1/sqrt(N) both ways), so the
forward operator is a restriction of a unitary map: ||forward(f)|| <= ||f||
and adjoint(forward(f)) == f whenever every k-space cell is sampled. Masks
live in DC-centered layout (DC at row ny//2, column nx//2).
"""

from __future__ import annotations

import os

import numpy as np
from scipy import fft as spfft

from .data_model import DynamicDataset, KSpaceData, SamplingPattern, _read_chunks, _write_chunks
from .errors import ShapeMismatch

GOLDEN_ANGLE_DEG = 111.25

MAGIC_MASK = b"DCCSMSK1"


def fft_workers() -> int:
    """Worker count for batched FFTs, from the DCCS_THREADS env var (default 1)."""
    try:
        return max(1, int(os.environ.get("DCCS_THREADS", "1")))
    except ValueError:
        return 1


def ray_cells(nx: int, ny: int, angle_deg: float, samples_per_ray: int):
    """Cartesian cells hit by one ray through the k-space center.

    The ray is sampled at ``samples_per_ray`` unit-spaced points centered on
    (nx//2, ny//2); each point is rounded to the nearest grid cell and points
    falling off the grid are dropped.  Returns (rows, cols) index arrays.
    """
    ang = np.deg2rad(angle_deg)
    r = np.arange(samples_per_ray, dtype=np.float64) - samples_per_ray // 2
    cols = np.rint(nx // 2 + r * np.cos(ang)).astype(np.int64)
    rows = np.rint(ny // 2 + r * np.sin(ang)).astype(np.int64)
    keep = (cols >= 0) & (cols < nx) & (rows >= 0) & (rows < ny)
    return rows[keep], cols[keep]


def golden_angle_mask(nx: int, ny: int, nt: int, rays_per_frame: int,
                      angle_increment: float = GOLDEN_ANGLE_DEG,
                      samples_per_ray: int | None = None,
                      reset_each_frame: bool = False) -> SamplingPattern:
    """Golden-angle pseudo-radial k-t sampling mask.

    Ray k (a global index running across frames unless ``reset_each_frame``)
    points at k * angle_increment mod 180 degrees; every ray passes through
    the k-space center, so the DC cell is sampled in each frame that has at
    least one ray.  Gridding is nearest-Cartesian-cell, no density weighting.

    Parameters
    ----------
    nx, ny, nt : int
        Grid size and number of frames.
    rays_per_frame : int
        Rays drawn per frame; 0 gives an all-false mask.
    angle_increment : float
        Angle between successive rays, degrees.  Default 111.25.
    samples_per_ray : int, optional
        Points per ray before gridding; defaults to max(nx, ny).
    reset_each_frame : bool
        Restart the angle sequence at 0 for every frame instead of
        continuing it across frames.
    """
    if min(nx, ny, nt) < 1:
        raise ValueError("grid dimensions must be positive")
    if rays_per_frame < 0:
        raise ValueError("rays_per_frame must be >= 0")
    if samples_per_ray is None:
        samples_per_ray = max(nx, ny)
    mask = np.zeros((nt, ny, nx), dtype=bool)
    for t in range(nt):
        for j in range(rays_per_frame):
            k = j if reset_each_frame else t * rays_per_frame + j
            ang = (k * angle_increment) % 180.0
            rows, cols = ray_cells(nx, ny, ang, samples_per_ray)
            mask[t, rows, cols] = True
    return SamplingPattern(mask, rays_per_frame, angle_increment)


# ---------------------------------------------------------------------------
# operator on raw arrays (used by the CG loops) and the typed wrappers


def fft2_centered(vals: np.ndarray) -> np.ndarray:
    """Unitary per-frame 2-D DFT, output in DC-centered layout."""
    spec = spfft.fft2(vals, axes=(-2, -1), norm="ortho", workers=fft_workers())
    return spfft.fftshift(spec, axes=(-2, -1))


def ifft2_centered(spec: np.ndarray) -> np.ndarray:
    """Inverse of :func:`fft2_centered`."""
    spec = spfft.ifftshift(spec, axes=(-2, -1))
    return spfft.ifft2(spec, axes=(-2, -1), norm="ortho", workers=fft_workers())


def forward(f: DynamicDataset, p: SamplingPattern) -> KSpaceData:
    """Apply the measurement operator: unitary 2-D DFT per frame, then mask."""
    if f.shape != p.shape:
        raise ShapeMismatch(f"dataset {f.shape} vs pattern {p.shape}")
    spec = fft2_centered(f.values)
    return KSpaceData(spec[p.mask], p, 0.0)


def adjoint(b: KSpaceData) -> DynamicDataset:
    """Adjoint of :func:`forward`: zero-fill, inverse unitary DFT per frame."""
    spec = np.zeros(b.shape, dtype=np.complex128)
    spec[b.pattern.mask] = b.samples
    return DynamicDataset(ifft2_centered(spec))


def add_noise(b: KSpaceData, sigma: float, seed: int) -> KSpaceData:
    """Add i.i.d. complex Gaussian noise, std ``sigma`` per real/imag part."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return KSpaceData(b.samples.copy(), b.pattern, b.noise_sigma)
    rng = np.random.default_rng(seed)
    n = b.samples.size
    noise = sigma * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    return KSpaceData(b.samples + noise, b.pattern, sigma)


def save_pattern(p: SamplingPattern, path) -> None:
    nt, ny, nx = p.shape
    header = {"nx": nx, "ny": ny, "nt": nt,
              "rays_per_frame": p.rays_per_frame, "angle_increment": p.angle_increment}
    _write_chunks(path, MAGIC_MASK, header, np.packbits(p.mask.ravel()).tobytes())


def load_pattern(path) -> SamplingPattern:
    header, payload = _read_chunks(path, MAGIC_MASK)
    nt, ny, nx = header["nt"], header["ny"], header["nx"]
    nbits = nt * ny * nx
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), count=nbits)
    return SamplingPattern(bits.astype(bool).reshape(nt, ny, nx),
                           int(header["rays_per_frame"]), float(header["angle_increment"]))
