"""Batch command line front end: simulate, reconstruct, evaluate.

Every command is deterministic for a fixed config and seed, refuses to
overwrite existing outputs unless --force is given, and writes a resolved
config next to its outputs so experiments are self-describing.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import encoding, metrics, phantom, priors, solver
from .data_model import (
    Roi,
    extract_roi,
    load_dataset,
    load_field,
    load_kspace,
    save_dataset,
    save_field,
    save_kspace,
)
from .errors import NonFiniteIterate
from .priors import PriorKind, PriorTag
from .registration import DemonsConfig
from .solver import Provided, ReconConfig, SpatialTV, ZeroFilled


class ConfigError(Exception):
    pass


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _load_json(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc


def _take(section: dict, path: str, allowed) -> None:
    unknown = set(section) - set(allowed)
    if unknown:
        raise ConfigError(f"config error at {path}: unknown key(s) {sorted(unknown)}")


def _prepare_outdir(outdir, filenames, force: bool) -> Path:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    if not force:
        clashes = [str(out / name) for name in filenames if (out / name).exists()]
        if clashes:
            raise ConfigError(
                "refusing to overwrite existing outputs (use --force): " + ", ".join(clashes))
    return out


def _write_manifest(out: Path, names) -> dict:
    manifest = {"files": {name: _sha256(out / name) for name in names}}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


# ---------------------------------------------------------------------------
# simulate


def _phantom_config(d: dict, args) -> phantom.PhantomConfig:
    _take(d, "phantom", ["nx", "ny", "nt", "breathing_amplitude", "breathing_period",
                         "bolus_arrival", "noise_seed", "motion"])
    motion = phantom.Motion(d.get("motion", "translation"))
    arrivals = dict(phantom.DEFAULT_ARRIVALS)
    arrivals.update(d.get("bolus_arrival", {}))
    seed = args.seed if args.seed is not None else d.get("noise_seed", 1234)
    return phantom.PhantomConfig(
        nx=int(d.get("nx", 64)), ny=int(d.get("ny", 64)), nt=int(d.get("nt", 35)),
        breathing_amplitude=float(d.get("breathing_amplitude", 4.0)),
        breathing_period=float(d.get("breathing_period", 7.0)),
        bolus_arrival=arrivals, noise_seed=int(seed), motion=motion)


def cmd_simulate(args) -> int:
    cfg = _load_json(args.config) if args.config else {}
    _take(cfg, "<root>", ["phantom", "sampling", "noise"])
    pcfg = _phantom_config(cfg.get("phantom", {}), args)
    samp = cfg.get("sampling", {})
    _take(samp, "sampling", ["rays_per_frame", "angle_increment", "samples_per_ray",
                             "reset_each_frame"])
    noise = cfg.get("noise", {})
    _take(noise, "noise", ["sigma", "seed"])
    rays = args.rays if args.rays is not None else int(samp.get("rays_per_frame", 20))
    angle = float(samp.get("angle_increment", encoding.GOLDEN_ANGLE_DEG))
    spr = samp.get("samples_per_ray")
    sigma = float(noise.get("sigma", 0.0))
    noise_seed = int(args.seed if args.seed is not None else noise.get("seed", 2024))

    names = ["truth.dcd", "true_theta.dcf", "mask.dcm", "kspace.dck", "roi.json",
             "resolved_config.json", "manifest.json"]
    out = _prepare_outdir(args.out, names, args.force)

    result = phantom.generate(pcfg)
    pattern = encoding.golden_angle_mask(
        pcfg.nx, pcfg.ny, pcfg.nt, rays, angle,
        None if spr is None else int(spr), bool(samp.get("reset_each_frame", False)))
    b = encoding.forward(result.truth, pattern)
    if sigma > 0:
        b = encoding.add_noise(b, sigma, noise_seed)

    save_dataset(result.truth, out / "truth.dcd")
    save_field(result.true_theta, out / "true_theta.dcf")
    encoding.save_pattern(pattern, out / "mask.dcm")
    save_kspace(b, out / "kspace.dck")
    sidecar = {
        "roi": result.roi.to_dict(),
        "region_masks": {k: v.astype(int).tolist() for k, v in result.region_masks.items()},
    }
    (out / "roi.json").write_text(json.dumps(sidecar) + "\n")
    resolved = {
        "phantom": {"nx": pcfg.nx, "ny": pcfg.ny, "nt": pcfg.nt,
                    "breathing_amplitude": pcfg.breathing_amplitude,
                    "breathing_period": pcfg.breathing_period,
                    "bolus_arrival": dict(pcfg.bolus_arrival),
                    "noise_seed": pcfg.noise_seed, "motion": pcfg.motion.value},
        "sampling": {"rays_per_frame": rays, "angle_increment": angle,
                     "samples_per_ray": spr,
                     "reset_each_frame": bool(samp.get("reset_each_frame", False))},
        "noise": {"sigma": sigma, "seed": noise_seed},
    }
    (out / "resolved_config.json").write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n")
    _write_manifest(out, names[:-1])
    return 0


# ---------------------------------------------------------------------------
# reconstruct


PRIOR_NAMES = {"tfl1": PriorTag.TEMPORAL_FOURIER_L1,
               "ttv": PriorTag.TEMPORAL_TV,
               "nuc": PriorTag.NUCLEAR_NORM}


def _recon_config(d: dict, args) -> ReconConfig:
    _take(d, "<root>", ["prior", "lambda", "beta0", "beta_factor", "alpha0", "alpha_factor",
                        "max_outer", "max_inner", "inner_cost_tol", "theta_tol",
                        "cg_tol", "cg_max_iters", "demons", "init", "cs_baseline"])
    pd = d.get("prior", {})
    _take(pd, "prior", ["kind", "tv_inner_iters", "tv_inner_rho"])
    kind_name = args.prior if args.prior else pd.get("kind", "ttv")
    if kind_name not in PRIOR_NAMES:
        raise ConfigError(f"config error at prior.kind: {kind_name!r} not one of {sorted(PRIOR_NAMES)}")
    prior = PriorKind(PRIOR_NAMES[kind_name],
                      int(pd.get("tv_inner_iters", 10)), float(pd.get("tv_inner_rho", 2.0)))
    dd = d.get("demons", {})
    _take(dd, "demons", ["alpha", "sigma", "max_iters", "stop_tol"])
    demons = DemonsConfig(alpha=float(dd.get("alpha", 4.0)), sigma=float(dd.get("sigma", 10.0)),
                          max_iters=int(dd.get("max_iters", 100)),
                          stop_tol=float(dd.get("stop_tol", 1e-2)))
    idd = d.get("init", {"kind": "spatial_tv"})
    _take(idd, "init", ["kind", "lambda_s", "dataset"])
    init_kind = idd.get("kind", "spatial_tv")
    if init_kind == "zero_filled":
        init = ZeroFilled()
    elif init_kind == "spatial_tv":
        init = SpatialTV(float(idd.get("lambda_s", 1e-3)))
    elif init_kind == "provided":
        init = Provided(load_dataset(idd["dataset"]))
    else:
        raise ConfigError(f"config error at init.kind: unknown initializer {init_kind!r}")
    lam = args.lam if args.lam is not None else float(d.get("lambda", 0.05))
    return ReconConfig(
        prior=prior, lam=lam, beta0=d.get("beta0"),
        beta_factor=float(d.get("beta_factor", 10.0)),
        alpha0=float(d.get("alpha0", 4.0)), alpha_factor=float(d.get("alpha_factor", 3.0)),
        max_outer=int(d.get("max_outer", 6)), max_inner=int(d.get("max_inner", 30)),
        inner_cost_tol=float(d.get("inner_cost_tol", 1e-3)),
        theta_tol=float(d.get("theta_tol", 1e-2)),
        cg_tol=float(d.get("cg_tol", 1e-5)), cg_max_iters=int(d.get("cg_max_iters", 50)),
        demons=demons, init=init,
        cs_baseline=bool(args.cs_baseline or d.get("cs_baseline", False)))


def _resolved_recon_config(cfg: ReconConfig) -> dict:
    if isinstance(cfg.init, ZeroFilled):
        init = {"kind": "zero_filled"}
    elif isinstance(cfg.init, SpatialTV):
        init = {"kind": "spatial_tv", "lambda_s": cfg.init.lambda_s}
    else:
        init = {"kind": "provided"}
    return {
        "prior": {"kind": cfg.prior.tag.value, "tv_inner_iters": cfg.prior.tv_inner_iters,
                  "tv_inner_rho": cfg.prior.tv_inner_rho},
        "lambda": cfg.lam, "beta0": cfg.beta0, "beta_factor": cfg.beta_factor,
        "alpha0": cfg.alpha0, "alpha_factor": cfg.alpha_factor,
        "max_outer": cfg.max_outer, "max_inner": cfg.max_inner,
        "inner_cost_tol": cfg.inner_cost_tol, "theta_tol": cfg.theta_tol,
        "cg_tol": cfg.cg_tol, "cg_max_iters": cfg.cg_max_iters,
        "demons": {"alpha": cfg.demons.alpha, "sigma": cfg.demons.sigma,
                   "max_iters": cfg.demons.max_iters, "stop_tol": cfg.demons.stop_tol},
        "init": init, "cs_baseline": cfg.cs_baseline,
    }


def cmd_reconstruct(args) -> int:
    cfg = _recon_config(_load_json(args.config) if args.config else {}, args)
    b = load_kspace(args.kspace)
    names = ["recon_f.dcd", "theta.dcf", "recon_g.dcd", "log.csv",
             "resolved_config.json", "manifest.json"]
    out = _prepare_outdir(args.out, names, args.force)
    (out / "resolved_config.json").write_text(
        json.dumps(_resolved_recon_config(cfg), indent=2, sort_keys=True) + "\n")
    try:
        result = solver.dccs_reconstruct(b, cfg)
    except NonFiniteIterate as exc:
        print(f"reconstruction aborted: {exc}", file=sys.stderr)
        return 2
    save_dataset(result.f, out / "recon_f.dcd")
    save_field(result.theta, out / "theta.dcf")
    save_dataset(result.g, out / "recon_g.dcd")
    result.log.write_csv(out / "log.csv")
    _write_manifest(out, names[:-1])
    return 0


# ---------------------------------------------------------------------------
# evaluate


def _load_roi(path) -> Roi:
    doc = _load_json(path)
    return Roi.from_dict(doc["roi"] if "roi" in doc else doc)


def _save_image(path, img, vmin, vmax, title=None):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(4, 4))
    ax.imshow(img, cmap="gray", vmin=vmin, vmax=vmax, interpolation="nearest")
    ax.set_axis_off()
    if title:
        ax.set_title(title, fontsize=9)
    fig.savefig(path, bbox_inches="tight", dpi=120)
    plt.close(fig)


def _evaluate_single(args, out: Path) -> None:
    recon = load_dataset(args.recon)
    truth = load_dataset(args.truth)
    roi = _load_roi(args.roi)
    t0 = time.perf_counter()
    ser = metrics.ser_roi(recon, truth, roi)
    hfser = metrics.hfser_roi(recon, truth, roi)
    reg_err = ""
    if args.theta_est and args.theta_true:
        est = load_field(args.theta_est)
        true = load_field(args.theta_true)
        heart = np.zeros((truth.ny, truth.nx), dtype=bool)
        sy, sx = roi.slices()
        heart[sy, sx] = True
        reg_err = metrics.registration_error(est, true, heart)
    wall = time.perf_counter() - t0
    metrics.write_metrics_csv(out / "metrics.csv", [{
        "method": args.method, "prior": args.prior or "", "rays_per_frame": args.rays or 0,
        "lambda": args.lam if args.lam is not None else "",
        "SER_ROI_dB": ser, "HFSER_ROI_dB": hfser, "reg_error_px": reg_err,
        "wall_s": round(wall, 3),
    }])

    tmag = truth.magnitude()
    vmin, vmax = np.percentile(tmag, [1.0, 99.0])
    frame = args.frame if args.frame is not None else truth.nt // 2
    rmag = recon.magnitude()
    _save_image(out / "frame.png", rmag[frame], vmin, vmax, f"frame {frame}")
    row = args.profile_row if args.profile_row is not None else roi.y0 + roi.height // 2
    _save_image(out / "profile_xt.png", rmag[:, row, :].T, vmin, vmax, f"x-t profile, row {row}")
    err = np.abs(rmag - tmag)[frame] * args.error_scale
    _save_image(out / "error_map.png", err, vmin, vmax, f"|error| x{args.error_scale:g}")


def _evaluate_runs(args, out: Path) -> None:
    import csv as csvmod

    rows = []
    for mpath in sorted(Path(args.runs).glob("**/metrics.csv")):
        with open(mpath, newline="") as fh:
            rows.extend(csvmod.DictReader(fh))
    if not rows:
        raise ConfigError(f"no metrics.csv files found under {args.runs}")
    rows.sort(key=lambda r: (r["method"], r["prior"], int(r["rays_per_frame"])))
    with open(out / "ser_vs_rays.csv", "w", newline="") as fh:
        writer = csvmod.DictWriter(fh, fieldnames=metrics.METRICS_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    series = {}
    for r in rows:
        series.setdefault((r["method"], r["prior"]), []).append(
            (int(r["rays_per_frame"]), float(r["SER_ROI_dB"])))
    for (method, prior), pts in sorted(series.items()):
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o",
                label=f"{method}/{prior}" if prior else method)
    ax.set_xlabel("rays per frame")
    ax.set_ylabel("SER_ROI (dB)")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.savefig(out / "ser_vs_rays.png", bbox_inches="tight", dpi=120)
    plt.close(fig)


def cmd_evaluate(args) -> int:
    if args.runs:
        names = ["ser_vs_rays.csv", "ser_vs_rays.png"]
        out = _prepare_outdir(args.out, names, args.force)
        _evaluate_runs(args, out)
    else:
        if not (args.recon and args.truth and args.roi):
            raise ConfigError("evaluate needs --recon, --truth and --roi (or --runs)")
        names = ["metrics.csv", "frame.png", "profile_xt.png", "error_map.png"]
        out = _prepare_outdir(args.out, names, args.force)
        _evaluate_single(args, out)
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _add_common(p):
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")
    p.add_argument("--threads", type=int, default=None,
                   help="FFT worker threads (env DCCS_THREADS)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dccs",
                                 description="dynamic MRI reconstruction with "
                                             "deformation-corrected compactness priors")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="generate phantom, mask and k-space data")
    sp.add_argument("--config", help="JSON config (phantom/sampling/noise sections)")
    sp.add_argument("--rays", type=int, default=None, help="override rays per frame")
    sp.add_argument("--seed", type=int, default=None, help="override phantom/noise seed")
    _add_common(sp)
    sp.set_defaults(func=cmd_simulate)

    rp = sub.add_parser("reconstruct", help="run the reconstruction on a k-space file")
    rp.add_argument("kspace", help="input .dck file")
    rp.add_argument("--config", help="JSON solver config")
    rp.add_argument("--prior", choices=sorted(PRIOR_NAMES), default=None)
    rp.add_argument("--lambda", dest="lam", type=float, default=None)
    rp.add_argument("--cs-baseline", action="store_true",
                    help="classical CS: skip motion estimation (identity warp)")
    _add_common(rp)
    rp.set_defaults(func=cmd_reconstruct)

    ep = sub.add_parser("evaluate", help="metrics and figures for a reconstruction")
    ep.add_argument("--recon", help="reconstructed .dcd file")
    ep.add_argument("--truth", help="ground-truth .dcd file")
    ep.add_argument("--roi", help="ROI JSON file")
    ep.add_argument("--theta-est", help="estimated deformation .dcf")
    ep.add_argument("--theta-true", help="ground-truth deformation .dcf")
    ep.add_argument("--runs", help="directory of runs: aggregate a SER-vs-rays curve")
    ep.add_argument("--method", default="recon", help="method label for the CSV row")
    ep.add_argument("--prior", choices=sorted(PRIOR_NAMES), default=None)
    ep.add_argument("--rays", type=int, default=None, help="rays per frame for the CSV row")
    ep.add_argument("--lambda", dest="lam", type=float, default=None)
    ep.add_argument("--frame", type=int, default=None, help="frame index for the PNGs")
    ep.add_argument("--profile-row", type=int, default=None, help="row for the x-t profile")
    ep.add_argument("--error-scale", type=float, default=5.0,
                    help="error map magnification")
    _add_common(ep)
    ep.set_defaults(func=cmd_evaluate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        os.environ["DCCS_THREADS"] = str(args.threads)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
