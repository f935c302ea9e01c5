"""Quantitative evaluation on magnitude images.

ser_roi is the frame-averaged signal-to-error ratio in dB inside a
rectangle; hfser_roi applies a zero-mean Laplacian-of-Gaussian edge filter
(15x15, sigma 1.5, edge-replicate convolution) to both series first, which
makes it sensitive to lost sharpness and insensitive to constant offsets.
"""

from __future__ import annotations

import csv

import numpy as np
from scipy.ndimage import convolve

from .data_model import DeformationField, DynamicDataset, Roi
from .errors import EmptyMask, ShapeMismatch, ZeroReferenceFrame

SER_CAP_DB = 300.0


def _ratio_db(recon_frames, ideal_frames) -> float:
    n = recon_frames.shape[0]
    ratios = np.empty(n)
    for i in range(n):
        sig = float(np.sum(ideal_frames[i] ** 2))
        if sig == 0.0:
            raise ZeroReferenceFrame(f"reference frame {i} is identically zero in the ROI")
        err = float(np.sum((recon_frames[i] - ideal_frames[i]) ** 2))
        ratios[i] = err / sig
    mean_ratio = float(ratios.mean())
    if mean_ratio == 0.0:
        return np.inf
    return -10.0 * np.log10(mean_ratio)


def ser_roi(recon: DynamicDataset, ideal: DynamicDataset, roi: Roi) -> float:
    """Signal-to-error ratio in dB over magnitude images inside the ROI."""
    if recon.shape != ideal.shape:
        raise ShapeMismatch(f"recon {recon.shape} vs ideal {ideal.shape}")
    roi.check_inside(recon.nx, recon.ny)
    sy, sx = roi.slices()
    return _ratio_db(recon.magnitude()[:, sy, sx], ideal.magnitude()[:, sy, sx])


def log_kernel(size: int = 15, sigma: float = 1.5) -> np.ndarray:
    """Sampled Laplacian-of-Gaussian kernel, normalized to zero mean."""
    half = size // 2
    yy, xx = np.mgrid[-half:half + 1, -half:half + 1].astype(np.float64)
    r2 = xx ** 2 + yy ** 2
    s2 = sigma * sigma
    k = (r2 - 2.0 * s2) / (s2 * s2) * np.exp(-r2 / (2.0 * s2))
    return k - k.mean()


def hfser_roi(recon: DynamicDataset, ideal: DynamicDataset, roi: Roi) -> float:
    """SER of LoG-filtered magnitude frames inside the ROI (edge fidelity)."""
    if recon.shape != ideal.shape:
        raise ShapeMismatch(f"recon {recon.shape} vs ideal {ideal.shape}")
    roi.check_inside(recon.nx, recon.ny)
    kern = log_kernel()
    sy, sx = roi.slices()
    fr = np.stack([convolve(m, kern, mode="nearest") for m in recon.magnitude()])
    fi = np.stack([convolve(m, kern, mode="nearest") for m in ideal.magnitude()])
    return _ratio_db(fr[:, sy, sx], fi[:, sy, sx])


def registration_error(theta_est: DeformationField, theta_true: DeformationField,
                       mask: np.ndarray) -> float:
    """Mean endpoint error in pixels over mask-true pixels, all frames."""
    if theta_est.shape != theta_true.shape:
        raise ShapeMismatch(f"est {theta_est.shape} vs true {theta_true.shape}")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != theta_est.shape[1:]:
        raise ShapeMismatch(f"mask {mask.shape} vs field frames {theta_est.shape[1:]}")
    if not mask.any():
        raise EmptyMask("registration error mask selects no pixels")
    ex = theta_est.dx[:, mask] - theta_true.dx[:, mask]
    ey = theta_est.dy[:, mask] - theta_true.dy[:, mask]
    return float(np.mean(np.sqrt(ex ** 2 + ey ** 2)))


METRICS_COLUMNS = ["method", "prior", "rays_per_frame", "lambda",
                   "SER_ROI_dB", "HFSER_ROI_dB", "reg_error_px", "wall_s"]


def cap_db(value: float) -> float:
    return float(min(value, SER_CAP_DB))


def write_metrics_csv(path, rows) -> None:
    """Write metric rows (dicts keyed by METRICS_COLUMNS) with dB values capped."""
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRICS_COLUMNS)
        writer.writeheader()
        for row in rows:
            row = dict(row)
            for key in ("SER_ROI_dB", "HFSER_ROI_dB"):
                if key in row and row[key] is not None and row[key] != "":
                    row[key] = cap_db(float(row[key]))
            writer.writerow(row)
