"""Command line interface.

Usage::

    nonstat-quad <simulate|estimate|var|bias|transport|cutlocus|experiment>
                 --config CONFIG.json [--seed N] [--out DIR] [--force]

Exit codes: 0 on success, 2 when a cost cap refuses the work, 1 on invalid
input.  Each subcommand reads ``model`` (see :mod:`nonstat_quad.io`) from the
config; ``experiment`` reads a full experiment config.  Outputs:

simulate
    ``zobs.bin``, ``phi.bin`` and ``theta<p>.bin`` (binary fields) plus
    ``simulate.json`` with the realness diagnostic.
estimate
    ``phihat.csv`` with frequency columns (``index``, ``l`` in d=1;
    ``index0``, ``index1``, ``l0``, ``l1`` in d=2), ``re``, ``im``, ``A`` and
    ``valid``; ``phihat_pixel.bin`` holds the pixel-domain estimate.  The
    input field is the config key ``input``.
var
    ``var.csv`` with frequency columns, ``Cvar`` and ``Cphiphi``.  The config
    key ``cxx`` selects ``matched`` (default), ``option1`` or ``option2``.
bias
    ``bias.csv`` with frequency columns, ``Cbias_fast``, ``Cbias_exact`` and
    ``Cphiphi``.  The config key ``bias`` selects ``fast`` (default),
    ``exact`` or ``both``.
transport
    ``transport.csv`` with ``r``, ``psi_prime`` and ``eta_radial``, and
    ``geodesic.csv`` with ``t``, ``r``, ``s`` and ``density`` for the config
    key ``times`` (default ``[0, t0/2, t0]``).
cutlocus
    ``cutlocus.json`` with ``c0`` for the matrix ``A`` (default identity)
    and ``cutlocus_profile.csv`` with the minimum Jacobian eigenvalue at
    ``c0`` per interior frequency.
experiment
    See :mod:`nonstat_quad.experiments`.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .error_spectra import bias_spectrum_exact, bias_spectrum_fast, var_spectrum
from .errors import CostCapError
from .estimator import estimate_fast
from .experiments import ExperimentConfig, realization_rng, run_experiment
from .grid import GridSpec, fft, ifft, white_noise_fourier
from .io import (
    kernel_from_dict,
    model_from_dict,
    read_field,
    transport_from_dict,
    write_csv,
    write_field,
    write_json,
)
from .simulate import add_noise, simulate_phi, simulate_Z, theta_from_phi
from .transport import cut_locus_c0, cut_locus_profile, geodesic_density


def _load(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ValueError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ValueError(f"config is not valid JSON: {exc}") from exc


def _model_spec(cfg: dict) -> dict:
    if "model" not in cfg:
        raise ValueError("config needs a 'model' entry")
    return cfg["model"]


def _out(args) -> Path:
    p = Path(args.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _freq_columns(grid: GridSpec, values: np.ndarray, name: str) -> dict:
    idx = np.indices(grid.shape).reshape(grid.d, -1)
    cols = {}
    for a in range(grid.d):
        cols[f"index{a}" if grid.d > 1 else "index"] = grid.index1d[idx[a]]
    for a in range(grid.d):
        cols[f"l{a}" if grid.d > 1 else "l"] = grid.k1d[idx[a]]
    v = np.asarray(values).reshape(-1)
    if np.iscomplexobj(v):
        cols["re"] = v.real
        cols["im"] = v.imag
    else:
        cols[name] = v
    return cols


def cmd_simulate(args, cfg: dict) -> int:
    spec = _model_spec(cfg)
    model = model_from_dict(spec)
    grid = model.grid
    phi = simulate_phi(model.Cphiphi, grid, realization_rng(args.seed, 0, stream=0))
    theta = theta_from_phi(phi, model.xi_lat, grid)
    rng = realization_rng(args.seed, 0)
    W = white_noise_fourier(grid, rng)
    diag: dict = {}
    Z = simulate_Z(model.C_lat, model.eta_lat, theta, grid, W, force=args.force,
                   workers=int(cfg.get("workers", 1)), diagnostics=diag)
    Z = add_noise(Z, model.CNN, grid, rng)
    out = _out(args)
    write_field(out / "zobs.bin", Z, grid)
    write_field(out / "phi.bin", phi, grid)
    for p in range(grid.d):
        write_field(out / f"theta{p}.bin", theta[p], grid)
    write_json(out / "simulate.json", {"seed": args.seed, **diag})
    return 0


def cmd_estimate(args, cfg: dict) -> int:
    spec = _model_spec(cfg)
    if "input" not in cfg:
        raise ValueError("estimate needs an 'input' field file in the config")
    Z, grid, domain = read_field(cfg["input"])
    if domain != "pixel":
        raise ValueError("estimate expects a pixel-domain field")
    kernel = kernel_from_dict(spec)
    if kernel.grid != grid:
        raise ValueError(f"input grid {grid} does not match model grid {kernel.grid}")
    phihat = estimate_fast(Z, kernel)
    cols = _freq_columns(grid, phihat, "phihat")
    cols["A"] = kernel.A.reshape(-1)
    cols["valid"] = kernel.valid.reshape(-1)
    out = _out(args)
    write_csv(out / "phihat.csv", cols)
    write_field(out / "phihat_pixel.bin", np.real(ifft(phihat, grid)), grid)
    return 0


def cmd_var(args, cfg: dict) -> int:
    kernel = kernel_from_dict(_model_spec(cfg))
    cv = var_spectrum(kernel, cfg.get("cxx", "matched"))
    cols = _freq_columns(kernel.grid, cv, "Cvar")
    cols["Cphiphi"] = kernel.model.Cphiphi.reshape(-1)
    write_csv(_out(args) / "var.csv", cols)
    return 0


def cmd_bias(args, cfg: dict) -> int:
    kernel = kernel_from_dict(_model_spec(cfg))
    kind = cfg.get("bias", "fast")
    if kind not in ("fast", "exact", "both"):
        raise ValueError(f"bias must be 'fast', 'exact' or 'both', got {kind!r}")
    nan = np.full(kernel.grid.shape, np.nan)
    fast = bias_spectrum_fast(kernel) if kind in ("fast", "both") else nan
    if kind in ("exact", "both"):
        exact = bias_spectrum_exact(kernel, cap=np.inf) if args.force else bias_spectrum_exact(kernel)
    else:
        exact = nan
    cols = _freq_columns(kernel.grid, fast, "Cbias_fast")
    cols["Cbias_exact"] = exact.reshape(-1)
    cols["Cphiphi"] = kernel.model.Cphiphi.reshape(-1)
    write_csv(_out(args) / "bias.csv", cols)
    return 0


def cmd_transport(args, cfg: dict) -> int:
    spec = _model_spec(cfg)
    tr = transport_from_dict(spec)
    rmax = float(cfg.get("rmax", np.pi * spec["grid"]["n"] / spec["grid"]["L"]))
    r = np.linspace(0.0, rmax, int(cfg.get("npts", 1001)))[1:]
    psi = tr.psi_prime(r)
    out = _out(args)
    write_csv(out / "transport.csv", {"r": r, "psi_prime": psi, "eta_radial": (psi - r) / tr.t0})
    times = [float(t) for t in cfg.get("times", [0.0, 0.5 * tr.t0, tr.t0])]
    geo = {"t": [], "r": [], "s": [], "density": []}
    for t in times:
        s_, dens = geodesic_density(tr, t, r)
        geo["t"].append(np.full(r.shape, t))
        geo["r"].append(r)
        geo["s"].append(s_)
        geo["density"].append(dens)
    write_csv(out / "geodesic.csv", {k: np.concatenate(v) for k, v in geo.items()})
    return 0


def cmd_cutlocus(args, cfg: dict) -> int:
    spec = _model_spec(cfg)
    model = model_from_dict(spec)
    grid = model.grid
    A = np.asarray(cfg.get("A", np.eye(model.d)), dtype=float)
    c0 = cut_locus_c0(model.eta_lat, A, grid)
    out = _out(args)
    write_json(out / "cutlocus.json", {"c0": c0 if np.isfinite(c0) else "unbounded", "A": A.tolist(),
                                        "t0": spec.get("eta", {}).get("t0")})
    if np.isfinite(c0):
        prof = cut_locus_profile(model.eta_lat, A, grid, c0)
        kc = np.fft.fftshift(grid.k, axes=tuple(range(1, grid.d + 1)))[(slice(None),) + (slice(2, -1),) * grid.d]
        cols = {f"k{a}" if grid.d > 1 else "k": kc[a].reshape(-1) for a in range(grid.d)}
        cols["min_eig"] = prof
        write_csv(out / "cutlocus_profile.csv", cols)
    return 0


def cmd_experiment(args, cfg: dict) -> int:
    if args.seed_given:
        cfg = {**cfg, "seed": args.seed}
    cfg = {**cfg, "out": args.out, "force": bool(args.force or cfg.get("force", False))}
    run_experiment(ExperimentConfig.from_dict(cfg))
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "var": cmd_var,
    "bias": cmd_bias,
    "transport": cmd_transport,
    "cutlocus": cmd_cutlocus,
    "experiment": cmd_experiment,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nonstat-quad",
                                 description="Quadratic estimation for spectral phase random fields.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="JSON config file")
    ap.add_argument("--seed", type=int, default=None, help="random seed (default 0 or the config seed)")
    ap.add_argument("--out", default="out", help="output directory")
    ap.add_argument("--force", action="store_true", help="override cost caps")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    args.seed_given = args.seed is not None
    try:
        cfg = _load(args.config)
        if args.seed is None:
            args.seed = int(cfg.get("seed", 0))
        return COMMANDS[args.command](args, cfg)
    except CostCapError as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
