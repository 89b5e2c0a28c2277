"""Serialization: model JSON, binary fields and CSV tables.

Model JSON schema::

    {
      "grid": {"d": 1, "L": 10.0, "n": 512},
      "C": {"kind": "matern", "nu": 2, "rho": 0.05, "sigma2": 1},
      "eta": {"kind": "transport", "target": {...}, "t0": 1.5}
             | {"kind": "linear", "scale": 1.0} | {"kind": "zero"},
      "xi": "gradient" | "ones" | "rot_gradient",
      "prior": {...},                 # default: constant 0
      "noise": {...},                 # default: constant 0
      "marginal": "option1",          # or "option2"
      "mask_fraction": 0.1,           # Nyquist mask, 0 disables
      "variant": "local_invariant"    # or "tilde"
    }

Spectral densities are ``{"kind": "matern", "nu", "rho", "sigma2"}``,
``{"kind": "constant", "value"}`` or ``{"kind": "tabulated", "radii", "values"}``.

Binary field files hold one JSON header line ``{"d", "L", "n", "domain"}``
followed by little-endian float64 values in row-major order.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .estimator import EstimatorKernel, VARIANTS, nyquist_mask
from .grid import GridSpec, make_grid
from .spectra import (
    EtaField,
    PhaseModel,
    SpectralDensity,
    SpectralMultiplier,
    constant,
    matern,
    tabulated,
)
from .transport import TransportSpec, build_transport

__all__ = [
    "density_from_dict",
    "grid_from_dict",
    "transport_from_dict",
    "model_from_dict",
    "kernel_from_dict",
    "write_field",
    "read_field",
    "write_csv",
    "read_csv",
    "write_json",
]

_NUM_FMT = "{:.12g}"


def density_from_dict(spec: dict, d: int) -> SpectralDensity:
    """Build a spectral density from its JSON description."""
    kind = spec.get("kind")
    if kind == "matern":
        return matern(float(spec["nu"]), float(spec["rho"]), float(spec["sigma2"]), d)
    if kind == "constant":
        return constant(float(spec["value"]))
    if kind == "tabulated":
        return tabulated(spec["radii"], spec["values"])
    raise ValueError(f"unknown spectral density kind {kind!r}")


def grid_from_dict(spec: dict) -> GridSpec:
    return make_grid(int(spec["d"]), float(spec["L"]), int(spec["n"]))


def transport_from_dict(spec: dict) -> TransportSpec:
    """Transport between ``C`` and ``eta.target`` of a model description."""
    d = int(spec["grid"]["d"])
    eta = spec["eta"]
    if eta.get("kind") != "transport":
        raise ValueError("model eta is not a transport field")
    C = density_from_dict(spec["C"], d)
    target = density_from_dict(eta["target"], d)
    return build_transport(C, target, float(eta["t0"]), d)


def _eta_from_dict(spec: dict) -> EtaField:
    eta = spec.get("eta", {"kind": "zero"})
    kind = eta.get("kind")
    if kind == "zero":
        return EtaField.zero()
    if kind == "linear":
        return EtaField.linear(float(eta.get("scale", 1.0)))
    if kind == "transport":
        return transport_from_dict(spec).eta
    raise ValueError(f"unknown eta kind {kind!r}")


def model_from_dict(spec: dict) -> PhaseModel:
    """Build a :class:`PhaseModel` from a model description."""
    grid = grid_from_dict(spec["grid"])
    d = grid.d
    zero = {"kind": "constant", "value": 0.0}
    return PhaseModel(
        grid=grid,
        C=density_from_dict(spec["C"], d),
        eta=_eta_from_dict(spec),
        xi=SpectralMultiplier(spec.get("xi", "gradient"), d),
        prior=density_from_dict(spec.get("prior", zero), d),
        noise=density_from_dict(spec.get("noise", zero), d),
        marginal=spec.get("marginal", "option1"),
    )


def kernel_from_dict(spec: dict, model: PhaseModel | None = None, variant: str | None = None) -> EstimatorKernel:
    """Estimator kernel with the mask and variant of a model description."""
    model = model_from_dict(spec) if model is None else model
    variant = spec.get("variant", "local_invariant") if variant is None else variant
    if variant not in VARIANTS:
        raise ValueError(f"unknown estimator variant {variant!r}")
    frac = float(spec.get("mask_fraction", 0.0))
    mask = nyquist_mask(model.grid, frac) if frac > 0 else None
    return EstimatorKernel(model, variant, mask)


def write_field(path, values: np.ndarray, grid: GridSpec, domain: str = "pixel") -> None:
    """Write a real field as a JSON header line plus little-endian float64 data."""
    values = np.asarray(values)
    if values.shape != grid.shape:
        raise ValueError(f"field shape {values.shape} does not match grid {grid.shape}")
    if np.iscomplexobj(values):
        raise ValueError("only real fields can be written")
    header = json.dumps({"d": grid.d, "L": grid.L, "n": grid.n, "domain": domain}, sort_keys=True)
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii") + b"\n")
        fh.write(np.ascontiguousarray(values, dtype="<f8").tobytes(order="C"))


def read_field(path) -> tuple[np.ndarray, GridSpec, str]:
    """Read a field written by :func:`write_field`; returns ``(values, grid, domain)``."""
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("ascii"))
        data = fh.read()
    grid = make_grid(int(header["d"]), float(header["L"]), int(header["n"]))
    values = np.frombuffer(data, dtype="<f8")
    if values.size != grid.size:
        raise ValueError(f"expected {grid.size} values, found {values.size}")
    return values.reshape(grid.shape).astype(float), grid, header.get("domain", "pixel")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return _NUM_FMT.format(float(v))


def write_csv(path, columns: dict) -> None:
    """Write equal-length columns with 12 significant digits."""
    names = list(columns)
    cols = [np.asarray(columns[k]).ravel() for k in names]
    lengths = {len(c) for c in cols}
    if len(lengths) > 1:
        raise ValueError(f"columns have different lengths: {sorted(lengths)}")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in zip(*cols):
            w.writerow([_fmt(v) for v in row])


def read_csv(path) -> dict:
    """Read a CSV written by :func:`write_csv` into float arrays."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    names = rows[0]
    data = np.array([[float(v) for v in r] for r in rows[1:]]) if len(rows) > 1 else np.empty((0, len(names)))
    return {name: data[:, i] for i, name in enumerate(names)}


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")
