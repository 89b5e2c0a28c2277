"""Spectral densities and the derived quantities of the spectral phase model.

The model bundles a stationary base spectrum ``C``, an odd transport field
``eta``, a Hermitian multiplier ``xi`` linking the scalar potential to the
vector nonstationarity ``theta``, a prior spectrum for the potential and an
additive noise spectrum.  :class:`PhaseModel` evaluates everything on a
lattice and caches the expansion coefficients used by the estimator.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.special import gammaln

from .errors import CostCapError
from .grid import GridSpec, hermitian_project, ifft, fft, odd_project

__all__ = [
    "SpectralDensity",
    "SpectralMultiplier",
    "EtaField",
    "PhaseModel",
    "matern",
    "constant",
    "tabulated",
    "derive_expansion",
    "marginal_spectrum",
    "preset_lensing",
    "OPTION2_CAP",
]

OPTION2_CAP = 2**13


@dataclass(frozen=True)
class SpectralDensity:
    """Isotropic nonnegative spectral density evaluated through ``|k|``.

    Parameters
    ----------
    kind : str
        ``"matern"``, ``"constant"`` or ``"tabulated"``.
    func : callable
        Maps an array of radii to density values.
    params : dict
        Parameters used to build ``func`` (kept for serialization).
    """

    kind: str
    func: Callable[[np.ndarray], np.ndarray] = field(repr=False, compare=False)
    params: dict = field(default_factory=dict)

    def __call__(self, k: np.ndarray) -> np.ndarray:
        """Evaluate at radii ``k`` (any shape; negative values use ``|k|``)."""
        return self.func(np.abs(np.asarray(k, dtype=float)))

    def on_vectors(self, kvec: np.ndarray) -> np.ndarray:
        """Evaluate at frequency vectors of shape ``(d, ...)``."""
        return self(np.sqrt(np.sum(np.asarray(kvec) ** 2, axis=0)))

    def on_grid(self, grid: GridSpec) -> np.ndarray:
        return self(grid.kabs)

    def scaled(self, s: float) -> "SpectralDensity":
        func = self.func
        return SpectralDensity(self.kind, lambda r: s * func(r), {**self.params, "scale": s})

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.params}


def matern(nu: float, rho: float, sigma2: float, d: int) -> SpectralDensity:
    """Matern spectral density on R^d.

    ``C_k = sigma2 2^d pi^{d/2} Gamma(nu+d/2)/Gamma(nu) a^nu (a + |k|^2)^{-nu-d/2}``
    with ``a = 4 nu / rho^2``.  It integrates to ``(2 pi)^d sigma2``.
    """
    if not (nu > 0 and rho > 0 and sigma2 > 0):
        raise ValueError(f"Matern parameters must be positive, got nu={nu}, rho={rho}, sigma2={sigma2}")
    if d not in (1, 2):
        raise ValueError(f"dimension must be 1 or 2, got {d}")
    a = 4.0 * nu / rho**2
    logc = (
        np.log(sigma2) + d * np.log(2.0) + 0.5 * d * np.log(np.pi)
        + gammaln(nu + 0.5 * d) - gammaln(nu) + nu * np.log(a)
    )
    expo = -nu - 0.5 * d

    def func(r: np.ndarray) -> np.ndarray:
        return np.exp(logc + expo * np.log(a + r * r))

    return SpectralDensity("matern", func, {"nu": nu, "rho": rho, "sigma2": sigma2, "d": d})


def constant(value: float) -> SpectralDensity:
    """Flat spectral density (``value`` may be zero)."""
    if value < 0:
        raise ValueError("spectral density must be nonnegative")
    return SpectralDensity("constant", lambda r: np.full(np.shape(r), float(value)), {"value": value})


def tabulated(radii, values) -> SpectralDensity:
    """Monotone cubic interpolation of a table in ``|k|`` with flat extrapolation."""
    radii = np.asarray(radii, dtype=float)
    values = np.asarray(values, dtype=float)
    if np.any(values < 0):
        raise ValueError("tabulated spectral density must be nonnegative")
    interp = PchipInterpolator(radii, values, extrapolate=False)
    lo, hi = values[0], values[-1]

    def func(r: np.ndarray) -> np.ndarray:
        out = interp(np.clip(r, radii[0], radii[-1]))
        out = np.where(r < radii[0], lo, np.where(r > radii[-1], hi, out))
        return np.maximum(out, 0.0)

    return SpectralDensity("tabulated", func, {"radii": radii.tolist(), "values": values.tolist()})


@dataclass(frozen=True)
class SpectralMultiplier:
    """Hermitian multiplier ``xi_k`` with one component per coordinate of theta.

    Kinds: ``gradient`` (``i k``), ``ones`` (all ones), ``rot_gradient``
    (``(i k_2, -i k_1)``, d=2) or ``custom`` with a user callable.
    """

    kind: str
    d: int
    func: Callable[[np.ndarray], np.ndarray] | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.kind not in ("gradient", "ones", "rot_gradient", "custom"):
            raise ValueError(f"unknown multiplier kind {self.kind!r}")
        if self.kind == "rot_gradient" and self.d != 2:
            raise ValueError("rot_gradient multiplier requires d=2")
        if self.kind == "custom" and self.func is None:
            raise ValueError("custom multiplier needs a callable")

    def __call__(self, kvec: np.ndarray) -> np.ndarray:
        kvec = np.asarray(kvec, dtype=float)
        if self.kind == "gradient":
            return 1j * kvec
        if self.kind == "ones":
            return np.ones(kvec.shape, dtype=complex)
        if self.kind == "rot_gradient":
            return np.stack([1j * kvec[1], -1j * kvec[0]])
        return np.asarray(self.func(kvec), dtype=complex)

    def on_grid(self, grid: GridSpec) -> np.ndarray:
        """Lattice values, made exactly Hermitian (zero imaginary part at Nyquist)."""
        return hermitian_project(self(grid.k), grid.d)


@dataclass(frozen=True)
class EtaField:
    """Odd real vector field ``eta_k`` given by a callable on frequency vectors."""

    func: Callable[[np.ndarray], np.ndarray] = field(repr=False, compare=False)
    kind: str = "custom"
    params: dict = field(default_factory=dict)

    def __call__(self, kvec: np.ndarray) -> np.ndarray:
        return np.asarray(self.func(np.asarray(kvec, dtype=float)), dtype=float)

    def on_grid(self, grid: GridSpec) -> np.ndarray:
        """Lattice values with exact oddness; self-conjugate frequencies map to zero."""
        return odd_project(self(grid.k), grid.d)

    def scaled(self, s: float) -> "EtaField":
        f = self.func
        return EtaField(lambda k: s * f(k), self.kind, {**self.params, "scale": s})

    @staticmethod
    def zero() -> "EtaField":
        return EtaField(lambda k: np.zeros_like(k), "zero")

    @staticmethod
    def linear(scale: float = 1.0) -> "EtaField":
        """``eta_k = scale * k``."""
        return EtaField(lambda k: scale * k, "linear", {"scale": scale})


def derive_expansion(C: np.ndarray, eta: np.ndarray, d: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Expansion coefficients of the phase model covariance.

    Parameters
    ----------
    C : ndarray
        Base spectrum on the lattice.
    eta : ndarray, shape (d, ...)
        Odd transport field on the lattice.
    d : int

    Returns
    -------
    C0 : ndarray
        ``C / (2 pi)^{d/2}``.
    C1 : ndarray, shape (d, ...)
        ``i eta_p C / (2 pi)^{d/2}``.
    C2 : ndarray, shape (d, d, ...)
        ``-eta_p eta_q C / (2 (2 pi)^{d/2})``.
    """
    norm = (2.0 * np.pi) ** (d / 2)
    C0 = C / norm
    C1 = 1j * eta * C / norm
    C2 = -eta[:, None] * eta[None, :] * C / (2.0 * norm)
    return C0, C1, C2


@dataclass(frozen=True)
class PhaseModel:
    """Spectral phase model on a lattice.

    Parameters
    ----------
    grid : GridSpec
    C : SpectralDensity
        Base spectrum.
    eta : EtaField
    xi : SpectralMultiplier
    prior : SpectralDensity
        Prior spectrum of the potential ``phi``.
    noise : SpectralDensity
        Additive noise spectrum.
    marginal : {"option1", "option2"}
        How the marginal observation spectrum is formed.
    option2_cap : int
        Largest lattice size for the exact option2 computation.
    """

    grid: GridSpec
    C: SpectralDensity
    eta: EtaField
    xi: SpectralMultiplier
    prior: SpectralDensity
    noise: SpectralDensity
    marginal: str = "option1"
    option2_cap: int = OPTION2_CAP

    def __post_init__(self) -> None:
        if self.marginal not in ("option1", "option2"):
            raise ValueError(f"marginal must be option1 or option2, got {self.marginal!r}")
        if self.xi.d != self.grid.d:
            raise ValueError("multiplier dimension does not match grid")

    @property
    def d(self) -> int:
        return self.grid.d

    @cached_property
    def C_lat(self) -> np.ndarray:
        return self.C.on_grid(self.grid)

    @cached_property
    def eta_lat(self) -> np.ndarray:
        return self.eta.on_grid(self.grid)

    @cached_property
    def xi_lat(self) -> np.ndarray:
        return self.xi.on_grid(self.grid)

    @cached_property
    def Cphiphi(self) -> np.ndarray:
        return self.prior.on_grid(self.grid)

    @cached_property
    def CNN(self) -> np.ndarray:
        return self.noise.on_grid(self.grid)

    @cached_property
    def _expansion(self):
        return derive_expansion(self.C_lat, self.eta_lat, self.d)

    @property
    def C0(self) -> np.ndarray:
        return self._expansion[0]

    @property
    def C1(self) -> np.ndarray:
        return self._expansion[1]

    @property
    def C2(self) -> np.ndarray:
        return self._expansion[2]

    @cached_property
    def Ctheta(self) -> np.ndarray:
        """Cross-spectrum ``xi_p conj(xi_q) C^{phi phi}``, shape (d, d, ...)."""
        xi = self.xi_lat
        return xi[:, None] * np.conj(xi[None, :]) * self.Cphiphi

    @cached_property
    def CZZobs(self) -> np.ndarray:
        return marginal_spectrum(self)

    def replace(self, **changes) -> "PhaseModel":
        from dataclasses import replace

        return replace(self, **changes)


def _option2_shape_marginal(model: PhaseModel) -> np.ndarray:
    """Spectral density of the phase-averaged field, ``Sum_r e^{-irk} cov(r) dx^d``."""
    grid = model.grid
    d = grid.d
    n_tot = grid.size
    if n_tot > model.option2_cap:
        raise CostCapError(
            f"option2 marginal spectrum needs O(N^2) work for N={n_tot} lattice points; "
            f"cap is {model.option2_cap}"
        )
    # covariance of theta at every lag r (real since theta is real)
    ctheta_r = np.real(ifft(model.Ctheta, grid)) / (2.0 * np.pi) ** (d / 2)
    ct0 = ctheta_r.reshape(d, d, -1)[:, :, :1]
    ct = ctheta_r.reshape(d, d, -1)
    sigma = 2.0 * ct0 - ct - np.swapaxes(ct, 0, 1)  # (d, d, R)
    eta = model.eta_lat.reshape(d, -1)  # (d, K)
    C = model.C_lat.reshape(-1)
    x = grid.x.reshape(d, -1)
    k = grid.k.reshape(d, -1)
    cov = np.empty(n_tot)
    chunk = max(1, 2**20 // n_tot)
    meas = grid.dk**d / (2.0 * np.pi) ** d
    # eta^T Sigma(r) eta for each (r, k) pair
    for start in range(0, n_tot, chunk):
        sl = slice(start, start + chunk)
        quad = np.einsum("pk,pqr,qk->rk", eta, sigma[:, :, sl], eta)
        phase = x[:, sl].T @ k
        cov[sl] = (np.cos(phase) * np.exp(-0.5 * quad)) @ C * meas
    cov = cov.reshape(grid.shape)
    dens = np.real(fft(cov, grid)) * (2.0 * np.pi) ** (d / 2)
    return dens


def marginal_spectrum(model: PhaseModel) -> np.ndarray:
    """Marginal spectral density ``C^{ZZobs}`` of the observations.

    ``option1`` uses the zeroth-order term ``C + C^{NN}``.  ``option2``
    averages the phase modulation over the prior on ``phi`` exactly on the
    lattice, which costs ``O(N^2)`` for ``N`` lattice points and is refused
    above ``model.option2_cap``.
    """
    if model.marginal == "option1":
        out = model.C_lat + model.CNN
    else:
        out = _option2_shape_marginal(model) + model.CNN
    return out


def preset_lensing(C_TT: SpectralDensity, grid: GridSpec, prior: SpectralDensity | None = None,
                   noise: SpectralDensity | None = None) -> PhaseModel:
    """Flat-sky lensing model: ``xi = i k`` and ``eta = k`` in d=2.

    The first-order kernel then reduces to
    ``(l.(k+l) C_{k+l} - l.k C_k) / (2 pi)``.
    """
    if grid.d != 2:
        raise ValueError("the lensing preset requires d=2")
    return PhaseModel(
        grid=grid,
        C=C_TT,
        eta=EtaField.linear(),
        xi=SpectralMultiplier("gradient", 2),
        prior=prior if prior is not None else constant(0.0),
        noise=noise if noise is not None else constant(0.0),
    )
