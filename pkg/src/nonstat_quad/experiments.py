"""Experiment drivers: presets, Monte Carlo accumulation and the preset runners.

Every run is a pure function of its :class:`ExperimentConfig`.  Random
streams are derived from ``(seed, stream, index)`` so realization ``i`` draws
the same numbers whatever the worker count or batch schedule, and
realizations are merged in index order.  Summary CSVs contain no timings;
wall-clock measurements go to a separate ``timings.json``.
"""

from __future__ import annotations

import copy
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .error_spectra import BIAS_CAP, bias_spectrum_exact, bias_spectrum_fast, var_spectrum
from .estimator import EstimatorKernel, estimate_fast
from .grid import GridSpec, fft, hermitian_project, ifft, white_noise_fourier
from .io import kernel_from_dict, model_from_dict, write_csv, write_field, write_json
from .simulate import simulate_phi, simulate_Z, theta_from_phi
from .spectra import PhaseModel
from .transport import cut_locus_c0

__all__ = [
    "ExperimentConfig",
    "PRESETS",
    "MC_BATCH",
    "MonteCarloSummary",
    "monte_carlo",
    "realization_rng",
    "radial_profile",
    "band_means",
    "resolvable_band",
    "derivative_operator",
    "spectral_divergence",
    "run_fig1",
    "run_fig2",
    "run_fig2_cutlocus",
    "run_fig3",
    "run_experiment",
]

MC_BATCH = 10
# stream tags for the random number generator
_PHI_STREAM = 0
_REAL_STREAM = 1

_FIG2_MODEL = {
    "grid": {"d": 1, "L": 10.0, "n": 10000},
    "C": {"kind": "matern", "nu": 2.0, "rho": 0.05, "sigma2": 1.0},
    "eta": {
        "kind": "transport",
        "target": {"kind": "matern", "nu": 2.1, "rho": 0.05, "sigma2": 1.0},
        "t0": 1.5,
    },
    "xi": "gradient",
    "prior": {"kind": "matern", "nu": 5.0, "rho": 1.5, "sigma2": 15.0**2 / (2.0 * np.pi) ** 4},
    "noise": {"kind": "constant", "value": 0.0},
    "marginal": "option1",
    "mask_fraction": 0.1,
    "variant": "local_invariant",
}

PRESETS: dict[str, dict] = {
    "fig1": {
        "experiment": "fig1",
        "model": {
            "grid": {"d": 1, "L": 2.0 * np.pi, "n": 1024},
            "C": {"kind": "matern", "nu": 2.0, "rho": 0.025, "sigma2": 1.0},
            "eta": {"kind": "linear", "scale": 1.0},
            "xi": "ones",
            "prior": {"kind": "matern", "nu": 3.0, "rho": 2.0 * np.pi / 10.0, "sigma2": 0.03**2},
            "noise": {"kind": "constant", "value": 0.0},
            "marginal": "option1",
            "mask_fraction": 0.1,
        },
        "M": 0,
        "seed": 0,
        "options": {"lmax_index": 20, "bias": "exact", "variant_tags": {"LI": "local_invariant", "tilde": "tilde"}},
    },
    "fig2": {
        "experiment": "fig2",
        "model": copy.deepcopy(_FIG2_MODEL),
        "M": 100,
        "seed": 2017,
        "options": {"band_width": 16, "n_show": 5, "exact_bias_n": 512, "theta_filter": "resolvable"},
    },
    "fig2_cutlocus": {
        "experiment": "fig2_cutlocus",
        "model": {**copy.deepcopy(_FIG2_MODEL),
                  "eta": {**_FIG2_MODEL["eta"], "t0": 1.5 / 7.0}},
        "M": 100,
        "seed": 2017,
        "options": {"band_width": 16, "n_show": 5, "exact_bias_n": 0, "theta_filter": "resolvable"},
    },
    "fig3": {
        "experiment": "fig3",
        "model": {
            "grid": {"d": 2, "L": 2.0 * np.pi, "n": 128},
            "C": {"kind": "matern", "nu": 1.5, "rho": 0.015, "sigma2": 1.0},
            "eta": {
                "kind": "transport",
                "target": {"kind": "matern", "nu": 1.7, "rho": 0.014, "sigma2": 1.0},
                "t0": 1.5,
            },
            "xi": "rot_gradient",
            "prior": {"kind": "matern", "nu": 5.0, "rho": 0.3 * np.pi, "sigma2": 0.5**2},
            "noise": {"kind": "constant", "value": 0.0},
            "marginal": "option1",
            "mask_fraction": 0.1,
            "variant": "local_invariant",
        },
        "M": 50,
        "seed": 2017,
        "options": {"radial_bin_width": 4.0, "min_bin_count": 8},
    },
}


@dataclass
class ExperimentConfig:
    """Complete description of an experiment run.

    Parameters
    ----------
    experiment : str
        ``fig1``, ``fig2``, ``fig2_cutlocus``, ``fig3`` or ``custom``.
    model : dict
        Model description (see :mod:`nonstat_quad.io`); holds the grid and ``t0``.
    M : int
        Number of realizations.
    seed : int
    scales : list of float
        Multipliers applied to the potential.
    out : str, optional
        Output directory; nothing is written when None.
    workers : int
        Threads for realizations; results do not depend on it.
    force : bool
        Override cost caps.
    options : dict
        Experiment-specific settings (band widths, filters, bins).
    """

    experiment: str
    model: dict
    M: int = 100
    seed: int = 0
    scales: list = field(default_factory=lambda: [1.0])
    out: str | None = None
    workers: int = 1
    force: bool = False
    options: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        exp = d.get("experiment", "custom")
        base = copy.deepcopy(PRESETS.get(exp, {})) if d.get("preset", True) else {}
        merged = {**base, **copy.deepcopy(d)}
        if "model" in base and "model" in d:
            merged["model"] = _deep_merge(base["model"], d["model"])
        if "options" in base and "options" in d:
            merged["options"] = {**base["options"], **d["options"]}
        merged.pop("preset", None)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(merged) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "model" not in merged:
            raise ValueError("config needs a model")
        return cls(**merged)

    @classmethod
    def preset(cls, name: str, **overrides) -> "ExperimentConfig":
        if name not in PRESETS:
            raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        return cls.from_dict({"experiment": name, **overrides})

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)


def _deep_merge(a: dict, b: dict) -> dict:
    out = copy.deepcopy(a)
    for k, v in b.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------


def realization_rng(seed: int, index: int, stream: int = _REAL_STREAM) -> np.random.Generator:
    """Independent generator for realization ``index`` of stream ``stream``."""
    return np.random.default_rng([int(seed), int(stream), int(index)])


@dataclass
class MonteCarloSummary:
    """Streaming per-frequency statistics over realizations."""

    count: int
    mean: np.ndarray | None = None
    variance: np.ndarray | None = None
    mse: np.ndarray | None = None
    kept: list = field(default_factory=list)


class _Welford:
    def __init__(self) -> None:
        self.n = 0
        self.mean = None
        self.m2 = None
        self.sq_err = None

    def push(self, x: np.ndarray, truth: np.ndarray | None) -> None:
        self.n += 1
        if self.mean is None:
            self.mean = np.zeros_like(x)
            self.m2 = np.zeros(x.shape)
        delta = x - self.mean
        self.mean = self.mean + delta / self.n
        self.m2 = self.m2 + np.real(np.conj(delta) * (x - self.mean))
        if truth is not None:
            e = np.abs(x - truth) ** 2
            self.sq_err = e if self.sq_err is None else self.sq_err + e


def monte_carlo(realize: Callable, M: int, seed: int, *, statistics=("mean", "variance"),
                workers: int = 1, batch: int = MC_BATCH, keep: int = 0) -> MonteCarloSummary:
    """Accumulate per-frequency statistics over ``M`` realizations.

    Parameters
    ----------
    realize : callable
        ``realize(rngs, indices)`` returns an array of estimates with a
        leading batch axis, or a pair ``(estimates, truths)``.  ``rngs[j]``
        is :func:`realization_rng` of ``indices[j]``.
    M : int
        Number of realizations, at least 2.
    seed : int
    statistics : iterable
        Any of ``"mean"``, ``"variance"`` and ``"mse"`` (needs truths).
    workers : int
        Threads evaluating batches; the batch partition is fixed, so the
        result does not depend on this value.
    batch : int
        Realizations per ``realize`` call.
    keep : int
        Store the first ``keep`` estimates.
    """
    if M < 2:
        raise ValueError("monte_carlo needs M >= 2")
    stats = set(statistics)
    if not stats <= {"mean", "variance", "mse"}:
        raise ValueError(f"unknown statistics {sorted(stats - {'mean', 'variance', 'mse'})}")
    starts = list(range(0, M, batch))
    acc = _Welford()
    kept: list = []

    def run(start: int):
        idx = list(range(start, min(start + batch, M)))
        return realize([realization_rng(seed, i) for i in idx], idx)

    def consume(res) -> None:
        est, truth = res if isinstance(res, tuple) else (res, None)
        if "mse" in stats and truth is None:
            raise ValueError("mse statistic needs realize to return truths")
        for j in range(est.shape[0]):
            if len(kept) < keep:
                kept.append(np.array(est[j]))
            acc.push(est[j], None if truth is None else truth[j])

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            for w0 in range(0, len(starts), workers):
                for res in ex.map(run, starts[w0:w0 + workers]):
                    consume(res)
    else:
        for s in starts:
            consume(run(s))
    out = MonteCarloSummary(count=acc.n, kept=kept)
    if "mean" in stats:
        out.mean = acc.mean
    if "variance" in stats:
        out.variance = acc.m2 / (acc.n - 1)
    if "mse" in stats:
        out.mse = acc.sq_err / acc.n
    return out


# ---------------------------------------------------------------------------
# Binning helpers
# ---------------------------------------------------------------------------


def radial_profile(spectrum: np.ndarray, grid: GridSpec, bins=None, *, select: np.ndarray | None = None) -> dict:
    """Mean of a 2-d lattice array over equal-width annuli in ``|l|``.

    Parameters
    ----------
    spectrum : ndarray
        Values on the d=2 lattice (FFT order).
    grid : GridSpec
    bins : int or array_like, optional
        Number of bins spanning ``(0, max |l|]`` or explicit edges.  Defaults
        to annuli of width ``dk``.
    select : ndarray of bool, optional
        Restrict to these frequencies; ``l = 0`` is always excluded.

    Returns
    -------
    dict
        ``center``, ``lo``, ``hi``, ``mean`` (nan where empty), ``count`` and
        ``empty`` per bin.
    """
    spectrum = np.asarray(spectrum)
    if grid.d != 2 or spectrum.shape != grid.shape:
        raise ValueError("radial_profile needs a d=2 lattice array")
    r = grid.kabs
    keep = r > 0
    if select is not None:
        keep &= select
    rmax = float(r.max())
    if bins is None:
        edges = np.arange(0.0, rmax + grid.dk, grid.dk)
    elif np.isscalar(bins):
        edges = np.linspace(0.0, rmax * (1.0 + 1e-12), int(bins) + 1)
    else:
        edges = np.asarray(bins, dtype=float)
    if edges[-1] <= rmax and select is None:
        edges = np.append(edges[:-1], rmax * (1.0 + 1e-12))
    vals = spectrum[keep]
    which = np.digitize(r[keep], edges) - 1
    inside = (which >= 0) & (which < len(edges) - 1)
    nb = len(edges) - 1
    count = np.bincount(which[inside], minlength=nb)
    total = np.bincount(which[inside], weights=np.real(vals[inside]), minlength=nb)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(count > 0, total / np.maximum(count, 1), np.nan)
    return {
        "center": 0.5 * (edges[:-1] + edges[1:]),
        "lo": edges[:-1],
        "hi": edges[1:],
        "mean": mean,
        "count": count,
        "empty": count == 0,
    }


def band_means(values: dict, select: np.ndarray, width: int) -> dict:
    """Average d=1 spectra over consecutive bands of ``width`` selected modes with ``l > 0``."""
    idx = np.flatnonzero(select)
    out = {"band_lo": [], "band_hi": [], "count": []}
    for name in values:
        out[name] = []
    for s in range(0, len(idx) - width + 1, width):
        sel = idx[s:s + width]
        out["band_lo"].append(sel[0])
        out["band_hi"].append(sel[-1])
        out["count"].append(len(sel))
        for name, arr in values.items():
            out[name].append(float(np.mean(np.asarray(arr)[sel])))
    return {k: np.asarray(v) for k, v in out.items()}


def _positive_modes(grid: GridSpec, kernel: EstimatorKernel) -> np.ndarray:
    """d=1 selector of valid modes with positive frequency index."""
    return kernel.valid & (grid.index1d > 0)


def resolvable_band(Cphiphi: np.ndarray, Cvar: np.ndarray, valid: np.ndarray, M: int) -> np.ndarray:
    """Low-pass set where the mean of ``M`` estimates resolves the signal.

    Keeps ``|l|`` up to the first radius at which ``M Cphiphi < Cvar`` on a
    valid mode, so the band is a disc in index space.
    """
    if Cphiphi.ndim != 1:
        raise ValueError("resolvable_band is defined for d=1 arrays")
    n = Cphiphi.shape[0]
    idx = np.abs(np.fft.fftfreq(n, 1.0 / n)).astype(int)
    ok = valid & (M * Cphiphi >= Cvar)
    cutoff = 0
    for i in range(1, n // 2):
        pair = idx == i
        if not np.all(ok[pair]):
            break
        cutoff = i
    return (idx <= cutoff) & (idx > 0)


def derivative_operator(grid: GridSpec) -> np.ndarray:
    """Lattice symbols ``i k_p`` made Hermitian (zero on Nyquist rows), shape (d, ...)."""
    return hermitian_project(1j * grid.k, grid.d)


def spectral_divergence(theta_k: np.ndarray, grid: GridSpec) -> float:
    """Relative size of ``sum_p (i k_p) theta_p,k`` on the lattice."""
    D = derivative_operator(grid)
    div = np.sum(D * theta_k, axis=0)
    scale = float(np.max(np.abs(D)) * np.max(np.abs(theta_k)))
    return float(np.max(np.abs(div)) / scale) if scale > 0 else 0.0


def _outdir(cfg: ExperimentConfig) -> Path | None:
    if cfg.out is None:
        return None
    p = Path(cfg.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


# ---------------------------------------------------------------------------
# fig1: analytic spectra
# ---------------------------------------------------------------------------


def run_fig1(cfg: ExperimentConfig) -> dict:
    """Analytic variance and bias spectra of both estimator variants.

    Writes ``fig1_spectra.csv`` with ``l^2``-weighted spectra for every
    valid positive frequency and ``fig1_summary.json`` with the ordering
    checks over the lowest ``lmax_index`` modes.
    """
    model = model_from_dict(cfg.model)
    grid = model.grid
    if grid.d != 1:
        raise ValueError("fig1 is a d=1 experiment")
    opts = cfg.options
    tags = opts.get("variant_tags", {"LI": "local_invariant", "tilde": "tilde"})
    lmax = int(opts.get("lmax_index", 20))
    bias_kind = opts.get("bias", "exact")
    ell = grid.k1d
    pos = grid.index1d > 0
    cols = {"l": ell[pos]}
    spectra = {}
    timings = {}
    for tag, variant in tags.items():
        K = kernel_from_dict(cfg.model, model, variant)
        t = time.perf_counter()
        cv = var_spectrum(K)
        timings[f"var_{tag}"] = time.perf_counter() - t
        t = time.perf_counter()
        if bias_kind == "exact":
            cb = bias_spectrum_exact(K, cap=BIAS_CAP if not cfg.force else np.inf)
        else:
            cb = bias_spectrum_fast(K)
        timings[f"bias_{tag}"] = time.perf_counter() - t
        spectra[tag] = (cv, cb, K.valid)
        cols[f"l2_var_{tag}"] = (ell**2 * cv)[pos]
        cols[f"l2_bias_{tag}"] = (ell**2 * cb)[pos]
    cols["l2_cphiphi"] = (ell**2 * model.Cphiphi)[pos]
    low = pos & (grid.index1d <= lmax)
    summary = {"lmax_index": lmax, "bias": bias_kind}
    for tag, (cv, cb, valid) in spectra.items():
        sel = low & valid
        lo = np.minimum(model.Cphiphi, cv)[sel]
        hi = np.maximum(model.Cphiphi, cv)[sel]
        summary[tag] = {
            "max_bias_over_min": float(np.max(cb[sel] / lo)),
            "min_bias_over_max": float(np.min(cb[sel] / hi)),
            "n_modes": int(sel.sum()),
        }
    out = _outdir(cfg)
    if out is not None:
        write_csv(out / "fig1_spectra.csv", cols)
        write_json(out / "fig1_summary.json", summary)
        write_json(out / "timings.json", timings)
    return {"columns": cols, "summary": summary, "timings": timings}


# ---------------------------------------------------------------------------
# fig2 and fig2_cutlocus: conditional Monte Carlo
# ---------------------------------------------------------------------------


def _theta_prime_symbol(model: PhaseModel) -> np.ndarray:
    """Symbol mapping ``phi_l`` to ``theta'_l`` in d=1."""
    return derivative_operator(model.grid)[0] * model.xi_lat[0]


def _fixed_phi(cfg: ExperimentConfig, model: PhaseModel) -> np.ndarray:
    rng = realization_rng(cfg.seed, 0, stream=_PHI_STREAM)
    phi = simulate_phi(model.Cphiphi, model.grid, rng)
    return float(cfg.scales[0]) * phi


def _conditional_realizer(model: PhaseModel, kernel: EstimatorKernel, theta: np.ndarray, *, force: bool,
                          sim_timer: list, workers: int = 1) -> Callable:
    grid = model.grid

    def realize(rngs, idx):
        W = np.stack([white_noise_fourier(grid, r) for r in rngs])
        t = time.perf_counter()
        Z = simulate_Z(model.C_lat, model.eta_lat, theta, grid, W, force=force, workers=workers)
        t1 = time.perf_counter()
        est = estimate_fast(Z, kernel)
        sim_timer[0] += t1 - t
        sim_timer[1] += time.perf_counter() - t1
        return est

    return realize


def _fig2_core(cfg: ExperimentConfig, tag: str) -> dict:
    model = model_from_dict(cfg.model)
    grid = model.grid
    if grid.d != 1:
        raise ValueError(f"{tag} is a d=1 experiment")
    K = kernel_from_dict(cfg.model, model)
    opts = cfg.options
    timings: dict = {}
    phi = _fixed_phi(cfg, model)
    phik = fft(phi, grid)
    theta = theta_from_phi(phi, model.xi_lat, grid)
    sim_timer = [0.0, 0.0]
    # theta is shared, so one large batch reuses the phase matrix; the batch
    # size is part of the config and never derived from the worker count
    batch = int(opts.get("mc_batch", cfg.M))
    inner = cfg.workers if batch >= cfg.M else 1
    realize = _conditional_realizer(model, K, theta, force=cfg.force, sim_timer=sim_timer, workers=inner)
    t = time.perf_counter()
    mc = monte_carlo(realize, cfg.M, cfg.seed, workers=cfg.workers, batch=batch,
                     keep=int(opts.get("n_show", 5)))
    timings["monte_carlo_total"] = time.perf_counter() - t
    timings["simulate"] = sim_timer[0]
    timings["estimate_batch"] = sim_timer[1]
    t = time.perf_counter()
    cv = var_spectrum(K)
    timings["var"] = time.perf_counter() - t
    t = time.perf_counter()
    bf = bias_spectrum_fast(K)
    timings["bias_fast"] = time.perf_counter() - t
    if grid.size <= BIAS_CAP or cfg.force:
        t = time.perf_counter()
        be = bias_spectrum_exact(K, cap=np.inf)
        timings["bias_exact"] = time.perf_counter() - t
    else:
        be = np.full(grid.shape, np.nan)
    dk = grid.dk
    ell = grid.k1d
    var_emp = mc.variance * dk
    bias_emp = np.abs(mc.mean - phik * K.valid) ** 2 * dk
    pos = _positive_modes(grid, K)
    spec_cols = {
        "l": ell[pos],
        "l2_cphiphi": (ell**2 * model.Cphiphi)[pos],
        "l2_var": (ell**2 * cv)[pos],
        "l2_var_emp": (ell**2 * var_emp)[pos],
        "l2_bias_exact": (ell**2 * be)[pos],
        "l2_bias_fast": (ell**2 * bf)[pos],
        "l2_bias_emp": (ell**2 * bias_emp)[pos],
    }
    width = int(opts.get("band_width", 16))
    bands = band_means({"var": cv, "var_emp": var_emp, "bias_exact": be, "bias_fast": bf, "bias_emp": bias_emp},
                       pos, width)
    with np.errstate(invalid="ignore", divide="ignore"):
        bands["var_ratio"] = bands["var_emp"] / bands["var"]
    # theta' in pixel space, optionally low-passed to the resolvable band
    sym = _theta_prime_symbol(model)
    filt_kind = opts.get("theta_filter", "resolvable")
    if filt_kind == "resolvable":
        filt = resolvable_band(model.Cphiphi, cv, K.valid, cfg.M)
    elif filt_kind == "none":
        filt = K.valid.copy()
    else:
        raise ValueError(f"unknown theta_filter {filt_kind!r}")
    tp = np.real(ifft(sym * phik * filt, grid))
    tp_hat = np.real(ifft(sym * mc.mean * filt, grid))
    est_cols = {"x": grid.x1d, "theta_prime": tp, "theta_prime_hat_mean": tp_hat}
    for j, e in enumerate(mc.kept):
        est_cols[f"theta_prime_hat_{j}"] = np.real(ifft(sym * e * filt, grid))
    summary = {
        "M": cfg.M,
        "seed": cfg.seed,
        "n": grid.n,
        "band_width": width,
        "theta_filter": filt_kind,
        "theta_filter_lmax_index": int(np.max(np.abs(grid.index1d[filt]))) if filt.any() else 0,
        "var_band_ratio_min": float(np.nanmin(bands["var_ratio"])) if len(bands["var_ratio"]) else None,
        "var_band_ratio_max": float(np.nanmax(bands["var_ratio"])) if len(bands["var_ratio"]) else None,
    }
    return {
        "model": model, "kernel": K, "phi": phi, "phik": phik, "mc": mc, "Cvar": cv, "Cbias_fast": bf,
        "Cbias_exact": be, "spectra": spec_cols, "bands": bands, "estimates": est_cols, "summary": summary,
        "timings": timings, "theta_prime": tp, "theta_prime_hat": tp_hat, "filter": filt,
    }


def _bias_check(cfg: ExperimentConfig, n: int) -> dict:
    """Fast versus exact bias spectrum on a downscaled grid of the same length."""
    spec = copy.deepcopy(cfg.model)
    spec["grid"]["n"] = int(n)
    model = model_from_dict(spec)
    K = kernel_from_dict(spec, model)
    grid = model.grid
    t = time.perf_counter()
    be = bias_spectrum_exact(K)
    t_exact = time.perf_counter() - t
    t = time.perf_counter()
    bf = bias_spectrum_fast(K)
    t_fast = time.perf_counter() - t
    pos = _positive_modes(grid, K)
    quarter = pos & (grid.index1d <= grid.n // 8)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = bf / be
    cols = {"l": grid.k1d[pos], "bias_exact": be[pos], "bias_fast": bf[pos], "ratio": ratio[pos]}
    return {
        "columns": cols,
        "quarter_max_rel_err": float(np.max(np.abs(ratio[quarter] - 1.0))),
        "timings": {"exact": t_exact, "fast": t_fast},
    }


def _write_fig2(cfg: ExperimentConfig, tag: str, res: dict, extra: dict | None = None) -> None:
    out = _outdir(cfg)
    if out is None:
        return
    write_csv(out / f"{tag}_spectra.csv", res["spectra"])
    write_csv(out / f"{tag}_bands.csv", res["bands"])
    write_csv(out / f"{tag}_estimates.csv", res["estimates"])
    write_json(out / f"{tag}_summary.json", {**res["summary"], **(extra or {})})
    write_json(out / "timings.json", res["timings"])


def run_fig2(cfg: ExperimentConfig) -> dict:
    """Conditional Monte Carlo at a fixed potential with analytic error spectra.

    Writes ``fig2_spectra.csv`` (per-mode spectra and empirical dots),
    ``fig2_bands.csv`` (band averages), ``fig2_estimates.csv`` (``theta'``,
    shown realizations and the conditional mean) and, when
    ``exact_bias_n > 0``, ``fig2_bias_check.csv`` comparing the fast and
    exact bias spectra on a grid of that size.
    """
    res = _fig2_core(cfg, "fig2")
    n_check = int(cfg.options.get("exact_bias_n", 0))
    extra = {}
    if n_check > 0:
        chk = _bias_check(cfg, n_check)
        res["bias_check"] = chk
        res["timings"]["bias_check"] = chk["timings"]
        extra["bias_check_n"] = n_check
        extra["bias_check_quarter_max_rel_err"] = chk["quarter_max_rel_err"]
        out = _outdir(cfg)
        if out is not None:
            write_csv(out / "fig2_bias_check.csv", chk["columns"])
    res["summary"].update(extra)
    _write_fig2(cfg, "fig2", res)
    return res


def cut_locus_statistics(theta_prime: np.ndarray, theta_prime_hat: np.ndarray, c0: float) -> dict:
    """Sign and magnitude diagnostics of the conditional-mean error around ``+/- c0``.

    ``sign_agreement`` is the fraction of exceeding pixels where the error
    ``E theta'_hat - theta'`` has the sign of ``theta'``.
    ``magnitude_agreement`` is the fraction where ``|E theta'_hat| - |theta'|``
    has the sign of ``theta'`` (amplified when positive, attenuated when
    negative).  Ratios are mean ``E theta'_hat / theta'`` per side; the
    inside slope regresses the error on ``theta'`` over inside pixels.
    """
    tp, th = theta_prime, theta_prime_hat
    err = th - tp
    ex = np.abs(tp) > c0
    pos, neg = ex & (tp > 0), ex & (tp < 0)
    inside = ~ex

    def frac(mask, a):
        return float(np.mean(np.sign(a[mask]) == np.sign(tp[mask]))) if mask.any() else float("nan")

    def ratio(mask):
        return float(np.mean(th[mask] / tp[mask])) if mask.any() else float("nan")

    denom = float(np.sum(tp[inside] ** 2))
    return {
        "c0": float(c0),
        "n_exceed": int(ex.sum()),
        "n_exceed_pos": int(pos.sum()),
        "n_exceed_neg": int(neg.sum()),
        "sign_agreement": frac(ex, err),
        "magnitude_agreement": frac(ex, np.abs(th) - np.abs(tp)),
        "ratio_pos": ratio(pos),
        "ratio_neg": ratio(neg),
        "inside_sign_agreement": frac(inside, err),
        "inside_slope": float(np.sum(err[inside] * tp[inside]) / denom) if denom > 0 else float("nan"),
    }


def run_fig2_cutlocus(cfg: ExperimentConfig) -> dict:
    """fig2 outputs plus the symmetric two-sided cut-locus band ``+/- c0``.

    ``c0`` uses ``A = 1``.  The estimates CSV gains ``band_lo``, ``band_hi``
    and an ``exceeds`` flag; the summary gains :func:`cut_locus_statistics`.
    """
    res = _fig2_core(cfg, "fig2_cutlocus")
    model = res["model"]
    c0 = cut_locus_c0(model.eta_lat, np.eye(1), model.grid)
    tp = res["theta_prime"]
    est = res["estimates"]
    est["band_lo"] = np.full(tp.shape, -c0)
    est["band_hi"] = np.full(tp.shape, c0)
    est["exceeds"] = (np.abs(tp) > c0).astype(int)
    stats = cut_locus_statistics(tp, res["theta_prime_hat"], c0)
    res["summary"].update(stats)
    res["cutlocus"] = stats
    _write_fig2(cfg, "fig2_cutlocus", res)
    return res


# ---------------------------------------------------------------------------
# fig3: d=2 Monte Carlo
# ---------------------------------------------------------------------------


def run_fig3(cfg: ExperimentConfig) -> dict:
    """d=2 Monte Carlo with a freshly drawn potential per realization.

    Writes ``fig3_phi_hat.csv``, ``fig3_phi.csv`` and ``fig3_zobs.csv``
    (pixel fields of the first realization, ``phi_hat`` Wiener filtered),
    ``fig3_radial.csv`` (radial profiles over valid modes) and
    ``fig3_summary.json``.
    """
    model = model_from_dict(cfg.model)
    grid = model.grid
    if grid.d != 2:
        raise ValueError("fig3 is a d=2 experiment")
    K = kernel_from_dict(cfg.model, model)
    opts = cfg.options
    timings: dict = {}
    t = time.perf_counter()
    cv = var_spectrum(K)
    timings["var"] = time.perf_counter() - t
    t = time.perf_counter()
    bf = bias_spectrum_fast(K)
    timings["bias_fast"] = time.perf_counter() - t
    total = cv + bf
    with np.errstate(invalid="ignore", divide="ignore"):
        wiener = np.where(K.valid, model.Cphiphi / (model.Cphiphi + total), 0.0)
    first: dict = {}
    corrs: dict = {}
    div_max = [0.0]
    scale = float(cfg.scales[0])
    t_sim = [0.0]

    def realize(rngs, idx):
        ests, truths = [], []
        for r, i in zip(rngs, idx):
            phi = scale * simulate_phi(model.Cphiphi, grid, r)
            phik = fft(phi, grid)
            theta_k = model.xi_lat * phik
            div = spectral_divergence(theta_k, grid)
            if div > 1e-8:
                raise ValueError(f"theta is not divergence free: relative divergence {div:.3g}")
            div_max[0] = max(div_max[0], div)
            theta = np.real(ifft(theta_k, grid))
            W = white_noise_fourier(grid, r)
            t0 = time.perf_counter()
            Z = simulate_Z(model.C_lat, model.eta_lat, theta, grid, W, force=cfg.force)
            t_sim[0] += time.perf_counter() - t0
            est = estimate_fast(Z, K)
            ests.append(est)
            truths.append(phik * K.valid)
            ph_hat = np.real(ifft(wiener * est, grid))
            corrs[i] = float(np.corrcoef(ph_hat.ravel(), phi.ravel())[0, 1])
            if i == 0:
                first.update(phi=phi, Z=Z, est=est)
        return np.stack(ests), np.stack(truths)

    t = time.perf_counter()
    mc = monte_carlo(realize, cfg.M, cfg.seed, statistics=("mean", "mse"), workers=cfg.workers, batch=1)
    timings["monte_carlo_total"] = time.perf_counter() - t
    timings["simulate"] = t_sim[0]
    mse = mc.mse * grid.dk**2
    width = float(opts.get("radial_bin_width", 4.0))
    edges = np.arange(0.5 * grid.dk, grid.kabs[K.valid].max() + width, width)
    l2 = grid.kabs**2
    prof = {name: radial_profile(l2 * arr, grid, edges, select=K.valid)
            for name, arr in {"var": cv, "cphiphi": model.Cphiphi, "bias_fast": bf, "mse": mse}.items()}
    min_count = int(opts.get("min_bin_count", 8))
    base = prof["var"]
    keep = base["count"] >= min_count
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = prof["mse"]["mean"] / (prof["var"]["mean"] + prof["bias_fast"]["mean"])
    radial_cols = {
        "l_center": base["center"][keep],
        "count": base["count"][keep],
        "l2_var": prof["var"]["mean"][keep],
        "l2_cphiphi": prof["cphiphi"]["mean"][keep],
        "l2_bias_fast": prof["bias_fast"]["mean"][keep],
        "l2_mse_emp": prof["mse"]["mean"][keep],
        "mse_ratio": ratio[keep],
    }
    phi_hat = np.real(ifft(wiener * first["est"], grid))
    corr = float(np.corrcoef(phi_hat.ravel(), first["phi"].ravel())[0, 1])
    summary = {
        "M": cfg.M,
        "seed": cfg.seed,
        "n": grid.n,
        "radial_bin_width": width,
        "mse_ratio_min": float(np.min(ratio[keep])),
        "mse_ratio_max": float(np.max(ratio[keep])),
        "correlation_first": corr,
        "correlation_mean": float(np.mean([corrs[i] for i in sorted(corrs)])),
        "max_relative_divergence": div_max[0],
    }
    out = _outdir(cfg)
    if out is not None:
        np.savetxt(out / "fig3_phi_hat.csv", phi_hat, delimiter=",", fmt="%.12g")
        np.savetxt(out / "fig3_phi.csv", first["phi"], delimiter=",", fmt="%.12g")
        np.savetxt(out / "fig3_zobs.csv", first["Z"], delimiter=",", fmt="%.12g")
        write_csv(out / "fig3_radial.csv", radial_cols)
        write_json(out / "fig3_summary.json", summary)
        write_json(out / "timings.json", timings)
    return {"model": model, "kernel": K, "Cvar": cv, "Cbias_fast": bf, "mc": mc, "radial": radial_cols,
            "summary": summary, "timings": timings, "phi_hat": phi_hat, "phi": first["phi"], "Z": first["Z"]}


_RUNNERS = {
    "fig1": run_fig1,
    "fig2": run_fig2,
    "fig2_cutlocus": run_fig2_cutlocus,
    "fig3": run_fig3,
}


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Dispatch on ``cfg.experiment``."""
    if cfg.experiment not in _RUNNERS:
        raise ValueError(f"unknown experiment {cfg.experiment!r}; choose from {sorted(_RUNNERS)}")
    if cfg.out is not None:
        write_json(Path(_outdir(cfg)) / "config.json", cfg.to_dict())
    return _RUNNERS[cfg.experiment](cfg)
