"""Bilinear warping and demons-style deformable registration.

The warp operator samples frame t at (x + dx(x, t), y + dy(x, t)) with
bilinear interpolation and edge-clamped coordinates.  Because it is linear
in the image, it has an exact transpose (scatter of the four interpolation
weights) which the reconstruction CG relies on.

Registration runs on magnitude images.  The force field follows the
normalized intensity-difference form
    u = (fixed - moving) * grad(fixed) / (|grad(fixed)|^2 + alpha^2 (fixed - moving)^2)
so small alpha admits large deformations and large alpha damps the force;
each update is smoothed with an isotropic Gaussian of std sigma before it
is added to the field, and updates that increase the SSD are step-halved
once, then rejected.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .data_model import DeformationField, DynamicDataset
from .errors import InvalidConfig, ShapeMismatch


@dataclass(frozen=True)
class DemonsConfig:
    alpha: float = 4.0
    sigma: float = 10.0
    max_iters: int = 100
    stop_tol: float = 1e-3

    def __post_init__(self):
        if self.alpha <= 0 or self.sigma <= 0 or self.max_iters < 1 or self.stop_tol <= 0:
            raise InvalidConfig(f"invalid demons configuration {self}")


# ---------------------------------------------------------------------------
# bilinear warp and its exact transpose


def _warp_plan(dx, dy):
    """Precompute flat gather indices and weights for a whole (nt, ny, nx) warp."""
    nt, ny, nx = dx.shape
    yy, xx = np.meshgrid(np.arange(ny, dtype=np.float64),
                         np.arange(nx, dtype=np.float64), indexing="ij")
    qx = np.clip(xx[None] + dx, 0.0, nx - 1.0)
    qy = np.clip(yy[None] + dy, 0.0, ny - 1.0)
    x0 = np.minimum(np.floor(qx).astype(np.int64), nx - 2) if nx > 1 else np.zeros_like(qx, dtype=np.int64)
    y0 = np.minimum(np.floor(qy).astype(np.int64), ny - 2) if ny > 1 else np.zeros_like(qy, dtype=np.int64)
    fx = qx - x0
    fy = qy - y0
    x1 = np.minimum(x0 + 1, nx - 1)
    y1 = np.minimum(y0 + 1, ny - 1)
    toff = (np.arange(nt, dtype=np.int64) * (ny * nx)).reshape(nt, 1, 1)
    idx = (
        (toff + y0 * nx + x0).ravel(),
        (toff + y0 * nx + x1).ravel(),
        (toff + y1 * nx + x0).ravel(),
        (toff + y1 * nx + x1).ravel(),
    )
    w = (
        ((1 - fx) * (1 - fy)).ravel(),
        (fx * (1 - fy)).ravel(),
        ((1 - fx) * fy).ravel(),
        (fx * fy).ravel(),
    )
    return idx, w


def _warp_apply(plan, vals):
    if plan is None:
        return vals.copy()
    idx, w = plan
    flat = vals.ravel()
    out = w[0] * flat[idx[0]]
    for k in range(1, 4):
        out += w[k] * flat[idx[k]]
    return out.reshape(vals.shape)


def _warp_transpose_apply(plan, vals):
    if plan is None:
        return vals.copy()
    idx, w = plan
    flat = vals.ravel()
    out = np.zeros_like(flat)
    for k in range(4):
        np.add.at(out, idx[k], w[k] * flat)
    return out.reshape(vals.shape)


def make_warp_plan(theta: DeformationField):
    """Reusable interpolation plan; None encodes the identity warp."""
    if theta.is_zero():
        return None
    return _warp_plan(theta.dx, theta.dy)


def warp(f: DynamicDataset, theta: DeformationField) -> DynamicDataset:
    """Bilinear warp of every frame by its displacement field."""
    if f.shape != theta.shape:
        raise ShapeMismatch(f"dataset {f.shape} vs field {theta.shape}")
    return f.with_values(_warp_apply(make_warp_plan(theta), f.values))


def warp_transpose(d: DynamicDataset, theta: DeformationField) -> DynamicDataset:
    """Exact transpose of :func:`warp` (scatter of the interpolation weights)."""
    if d.shape != theta.shape:
        raise ShapeMismatch(f"dataset {d.shape} vs field {theta.shape}")
    return d.with_values(_warp_transpose_apply(make_warp_plan(theta), d.values))


def _warp_frame(frame, dx, dy):
    return _warp_apply(_warp_plan(dx[None], dy[None]), frame[None])[0]


# ---------------------------------------------------------------------------
# demons iteration


def demons_force(moving, fixed, alpha: float):
    """Normalized intensity-difference force field (ux, uy) on magnitude images."""
    mov = np.abs(np.asarray(moving))
    fix = np.abs(np.asarray(fixed))
    if mov.shape != fix.shape:
        raise ShapeMismatch(f"moving {mov.shape} vs fixed {fix.shape}")
    diff = fix - mov
    gy, gx = np.gradient(fix)
    den = gx * gx + gy * gy + (alpha * alpha) * diff * diff
    ok = den >= 1e-12
    scale = np.where(ok, diff / np.where(ok, den, 1.0), 0.0)
    return scale * gx, scale * gy


def _smooth(u, sigma):
    radius = int(np.ceil(3.0 * sigma))
    return gaussian_filter(u, sigma, mode="nearest", radius=radius)


def _smooth_stack(u, sigma):
    # per-frame 2-D filtering of an (nt, ny, nx) stack in one separable pass
    radius = int(np.ceil(3.0 * sigma))
    return gaussian_filter(u, (0.0, sigma, sigma), mode="nearest", radius=(0, radius, radius))


def _ssd(a, b):
    d = a - b
    return float(np.dot(d.ravel(), d.ravel()))


def _batch_force(cur, fix, gradx, grady, alpha):
    diff = fix - cur
    den = gradx * gradx + grady * grady + (alpha * alpha) * diff * diff
    ok = den >= 1e-12
    scale = np.where(ok, diff / np.where(ok, den, 1.0), 0.0)
    return scale * gradx, scale * grady


def _register_stack(mov, fix, cfg: DemonsConfig, dx0, dy0, trace_out=None):
    """Demons iteration over a whole (nt, ny, nx) stack of independent frames.

    Per-frame bookkeeping keeps the result identical to registering each
    frame on its own: frames accept/halve/stop individually, frozen frames
    keep their field.  Returns (dx, dy).
    """
    nt = mov.shape[0]
    dx = np.array(dx0, dtype=np.float64)
    dy = np.array(dy0, dtype=np.float64)
    cur = _warp_apply(_warp_plan(dx, dy) if (dx.any() or dy.any()) else None, mov)
    ssd = np.einsum("tyx,tyx->t", cur - fix, cur - fix)
    if trace_out is not None:
        trace_out.append(ssd.copy())
    idx = np.arange(nt)
    for _ in range(cfg.max_iters):
        # work on the still-active subset only
        mov_a, fix_a, cur_a = mov[idx], fix[idx], cur[idx]
        grady, gradx = np.gradient(fix_a, axis=(1, 2))
        ux, uy = _batch_force(cur_a, fix_a, gradx, grady, cfg.alpha)
        ux = _smooth_stack(ux, cfg.sigma)
        uy = _smooth_stack(uy, cfg.sigma)
        step = np.ones(len(idx))
        ssd_a = ssd[idx]
        for _attempt in range(2):  # full step, then one halving for worse frames
            cand_dx = dx[idx] + step[:, None, None] * ux
            cand_dy = dy[idx] + step[:, None, None] * uy
            cand = _warp_apply(_warp_plan(cand_dx, cand_dy), mov_a)
            cand_ssd = np.einsum("tyx,tyx->t", cand - fix_a, cand - fix_a)
            worse = cand_ssd > ssd_a
            if not worse.any():
                break
            step = np.where(worse, step * 0.5, step)
        accepted = cand_ssd <= ssd_a
        take = idx[accepted]
        dx[take] = cand_dx[accepted]
        dy[take] = cand_dy[accepted]
        cur[take] = cand[accepted]
        ssd[take] = cand_ssd[accepted]
        if trace_out is not None:
            trace_out.append(ssd.copy())
        upd = step * np.sqrt(np.einsum("tyx,tyx->t", ux, ux) + np.einsum("tyx,tyx->t", uy, uy))
        theta_norm = np.sqrt(np.einsum("tyx,tyx->t", dx[idx], dx[idx])
                             + np.einsum("tyx,tyx->t", dy[idx], dy[idx]))
        converged = accepted & (upd <= cfg.stop_tol * np.maximum(theta_norm, 1e-30))
        idx = idx[accepted & ~converged]
        if idx.size == 0:
            break
    return dx, dy


def demons_register(moving, fixed, cfg: DemonsConfig, theta_init=None, return_ssd=False):
    """Register one frame to a fixed frame with Gaussian-regularized demons.

    Parameters
    ----------
    moving, fixed : 2-D arrays (complex input is reduced to magnitude)
    cfg : DemonsConfig
    theta_init : optional (dx, dy) pair of 2-D arrays to warm-start from
    return_ssd : also return the per-iteration SSD trace (after each accept)

    Returns
    -------
    (dx, dy), or ((dx, dy), ssd_trace) when return_ssd is set.  The final
    field never has a larger SSD than the initial one: updates that raise
    the SSD are halved once and, failing that, rejected (iteration stops).
    """
    mov = np.abs(np.asarray(moving, dtype=np.complex128)).astype(np.float64)
    fix = np.abs(np.asarray(fixed, dtype=np.complex128)).astype(np.float64)
    if mov.shape != fix.shape:
        raise ShapeMismatch(f"moving {mov.shape} vs fixed {fix.shape}")
    if theta_init is None:
        dx0 = np.zeros(mov.shape)
        dy0 = np.zeros(mov.shape)
    else:
        dx0, dy0 = theta_init
    trace = [] if return_ssd else None
    dx, dy = _register_stack(mov[None], fix[None], cfg, np.asarray(dx0)[None],
                             np.asarray(dy0)[None], trace_out=trace)
    if return_ssd:
        return (dx[0], dy[0]), [float(s[0]) for s in trace]
    return dx[0], dy[0]


def register_sequence(f: DynamicDataset, g: DynamicDataset, cfg: DemonsConfig,
                      theta_init: DeformationField | None = None) -> DeformationField:
    """Register every frame of f (moving) to the same frame of g (fixed).

    Frames are registered independently (batched internally); the result
    matches per-frame demons_register calls exactly.
    """
    if f.shape != g.shape:
        raise ShapeMismatch(f"moving {f.shape} vs fixed {g.shape}")
    nt, ny, nx = f.shape
    if theta_init is not None and theta_init.shape != f.shape:
        raise ShapeMismatch(f"theta_init {theta_init.shape} vs data {f.shape}")
    if theta_init is None:
        dx0 = np.zeros((nt, ny, nx))
        dy0 = dx0
    else:
        dx0, dy0 = theta_init.dx, theta_init.dy
    dx, dy = _register_stack(np.abs(f.values), np.abs(g.values), cfg, dx0, dy0)
    return DeformationField(dx, dy)
