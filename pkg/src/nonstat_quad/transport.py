"""Isotropic optimal transport between spectral densities.

For isotropic densities the monotone map between radial CDFs,
``psi'(r) = Finv_target(F_base(r))``, is the gradient of a convex potential and
pushes the base density onto the target.  The transport field is

    eta_k = (psi'(|k|) k/|k| - k) / t0,

so that ``k -> k + t eta_k`` traces the Wasserstein geodesic for
``t`` in ``[0, t0]``.  Matern densities have closed-form radial CDFs in terms of
the regularized incomplete beta function.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.interpolate import PchipInterpolator
from scipy.special import gammaln

from .grid import GridSpec
from .spectra import EtaField, SpectralDensity
from .special import beta_quantile, reg_inc_beta_pair

__all__ = [
    "IsotropicCDF",
    "TransportSpec",
    "matern_F",
    "matern_Finv",
    "isotropic_cdf",
    "radial_mass",
    "build_transport",
    "geodesic_density",
    "cut_locus_c0",
    "cut_locus_profile",
]


def _check_nu(nu: float) -> None:
    if not nu > 1:
        raise ValueError(f"transport needs a finite second moment (nu > 1), got nu={nu}")


def _matern_F_pair(r, nu: float, rho: float, d: int) -> tuple[np.ndarray, np.ndarray]:
    """``(F(r), 1 - F(r))`` for the Matern radial CDF."""
    r = np.asarray(r, dtype=float)
    a = 4.0 * nu / rho**2
    r2 = r * r
    lower = reg_inc_beta_pair(r2 / (a + r2), 0.5 * d, nu)[0]
    upper = reg_inc_beta_pair(a / (a + r2), nu, 0.5 * d)[0]
    return lower, upper


def matern_F(r, nu: float, rho: float, d: int, *, upper: bool = False):
    """Radial CDF of a Matern density, ``I_{r^2/(a+r^2)}(d/2, nu)`` with ``a = 4 nu/rho^2``.

    With ``upper=True`` the survival function ``1 - F(r) = I_{a/(a+r^2)}(nu, d/2)``
    is returned, which keeps full relative precision in the tail.
    """
    _check_nu(nu)
    out = _matern_F_pair(r, nu, rho, d)[1 if upper else 0]
    return out if out.ndim else float(out)


def _matern_Finv_pair(u, ubar, nu: float, rho: float, d: int) -> np.ndarray:
    """Inverse radial CDF evaluated from ``u`` or, in the upper tail, from ``ubar = 1-u``."""
    u = np.asarray(u, dtype=float)
    ubar = np.asarray(ubar, dtype=float)
    a = 4.0 * nu / rho**2
    out = np.zeros(u.shape)
    low = (u <= 0.5) & (u > 0)
    high = (u > 0.5) & (ubar > 0)
    out[~low & ~high & (ubar <= 0)] = np.inf
    if low.any():
        x = beta_quantile(u[low], 0.5 * d, nu)
        out[low] = np.sqrt(a * x / (1.0 - x))
    if high.any():
        y = beta_quantile(ubar[high], nu, 0.5 * d)
        out[high] = np.sqrt(a * (1.0 - y) / y)
    return out


def matern_Finv(u, nu: float, rho: float, d: int, *, upper: bool = False):
    """Inverse Matern radial CDF, ``sqrt(a) (1/Q_u(d/2, nu) - 1)^{-1/2}``.

    With ``upper=True`` the argument is the survival probability ``1 - F``.
    """
    _check_nu(nu)
    u = np.asarray(u, dtype=float)
    if np.any((u < 0) | (u > 1)):
        raise ValueError("u must lie in [0, 1]")
    out = _matern_Finv_pair(1.0 - u, u, nu, rho, d) if upper else _matern_Finv_pair(u, 1.0 - u, nu, rho, d)
    return out if out.ndim else float(out)


def _surface(d: int) -> float:
    return float(2.0 * np.pi ** (d / 2) / np.exp(gammaln(d / 2)))


def radial_mass(C: SpectralDensity, d: int) -> float:
    """Total mass ``int C(|k|) dk`` over R^d by adaptive quadrature."""
    val, _ = integrate.quad(lambda r: r ** (d - 1) * float(C(np.array(r))), 0, np.inf, limit=400, epsabs=0,
                            epsrel=1e-11)
    return _surface(d) * val


@dataclass(frozen=True)
class IsotropicCDF:
    """Radial CDF of an isotropic density with upper-tail aware evaluators.

    ``pair(r)`` returns ``(F(r), 1 - F(r))``; ``inv_pair(u, ubar)`` inverts
    using whichever of ``u`` or ``ubar`` is smaller, preserving tail precision.
    """

    density: SpectralDensity
    d: int
    mass: float
    pair: Callable = field(repr=False, compare=False)
    inv_pair: Callable = field(repr=False, compare=False)

    def F(self, r):
        return self.pair(np.asarray(r, dtype=float))[0]

    def Finv(self, u):
        u = np.asarray(u, dtype=float)
        return self.inv_pair(u, 1.0 - u)


def isotropic_cdf(C: SpectralDensity, d: int, rmax: float | None = None, npts: int = 4001) -> IsotropicCDF:
    """Radial CDF of ``C``, normalized by its numerically computed total mass.

    Matern densities use the closed form.  Other kinds are tabulated by
    quadrature on a geometric radius grid up to ``rmax`` and interpolated
    monotonically.
    """
    if C.kind != "matern" and rmax is None:
        raise ValueError("non-Matern densities need rmax for tabulation")
    mass = radial_mass(C, d)
    if C.kind == "matern":
        nu, rho = C.params["nu"], C.params["rho"]
        _check_nu(nu)
        return IsotropicCDF(
            C, d, mass,
            lambda r: _matern_F_pair(r, nu, rho, d),
            lambda u, ub: _matern_Finv_pair(u, ub, nu, rho, d),
        )
    radii = np.concatenate([[0.0], np.geomspace(rmax * 1e-8, rmax, npts)])
    integrand = _surface(d) * radii ** (d - 1) * C(radii)
    cum = integrate.cumulative_trapezoid(integrand, radii, initial=0.0) / mass
    cum = np.maximum.accumulate(np.clip(cum, 0.0, 1.0))
    fwd = PchipInterpolator(radii, cum)
    keep = np.concatenate([[True], np.diff(cum) > 0])
    inv = PchipInterpolator(cum[keep], radii[keep])

    def pair(r):
        f = fwd(np.clip(r, 0, rmax))
        f = np.where(r >= rmax, 1.0, f)
        return f, 1.0 - f

    def inv_pair(u, ub):
        return inv(np.clip(u, 0, cum[keep][-1]))

    return IsotropicCDF(C, d, mass, pair, inv_pair)


@dataclass(frozen=True)
class TransportSpec:
    """Isotropic transport from ``C`` to ``C_target`` with time scale ``t0``."""

    C: SpectralDensity
    C_target: SpectralDensity
    t0: float
    d: int
    F: IsotropicCDF = field(repr=False)
    F_target: IsotropicCDF = field(repr=False)
    identity: bool = False

    def psi_prime(self, r) -> np.ndarray:
        """Radial transport map ``Finv_target(F(r))``."""
        r = np.asarray(r, dtype=float)
        if self.identity:
            return r.copy()
        flat = r.ravel()
        uniq, inverse = np.unique(flat, return_inverse=True)
        u, ubar = self.F.pair(uniq)
        out = self.F_target.inv_pair(u, ubar)
        return out[inverse].reshape(r.shape)

    def eta_func(self, kvec: np.ndarray) -> np.ndarray:
        kvec = np.asarray(kvec, dtype=float)
        r = np.sqrt(np.sum(kvec**2, axis=0))
        with np.errstate(invalid="ignore", divide="ignore"):
            ratio = np.where(r > 0, self.psi_prime(r) / np.where(r > 0, r, 1.0), 1.0)
        return (ratio - 1.0) * kvec / self.t0

    @property
    def eta(self) -> EtaField:
        return EtaField(self.eta_func, "transport", {"t0": self.t0})


def build_transport(C: SpectralDensity, C_target: SpectralDensity, t0: float, d: int,
                    *, mass_rtol: float = 0.01, rmax: float | None = None) -> TransportSpec:
    """Construct the isotropic transport field between two spectral densities.

    Parameters
    ----------
    C, C_target : SpectralDensity
        Base and target densities with (nearly) equal total mass.
    t0 : float
        Geodesic time at which the target is reached.
    d : int
    mass_rtol : float
        Allowed relative mismatch of the total masses.
    rmax : float, optional
        Tabulation range for non-Matern densities.

    Raises
    ------
    ValueError
        If the masses differ by more than ``mass_rtol`` or ``t0 <= 0``.
    """
    if not t0 > 0:
        raise ValueError(f"t0 must be positive, got {t0}")
    F = isotropic_cdf(C, d, rmax)
    Ft = isotropic_cdf(C_target, d, rmax)
    if abs(F.mass - Ft.mass) > mass_rtol * max(F.mass, Ft.mass):
        raise ValueError(f"total masses differ: base {F.mass:.6g} vs target {Ft.mass:.6g}")
    identity = C.kind == C_target.kind and C.params == C_target.params
    return TransportSpec(C, C_target, float(t0), d, F, Ft, identity)


def geodesic_density(transport: TransportSpec, t: float, radii, *, rel_step: float = 1e-5):
    """Density of the pushforward of ``C`` under ``k -> k + t eta_k``.

    Uses the radial change of variables ``s = T_t(r) = (1-tau) r + tau psi'(r)``
    with ``tau = t/t0``:

        C_t(s) = C(r) r^{d-1} / (s^{d-1} T_t'(r)),

    where ``T_t'`` is a central finite difference.

    Parameters
    ----------
    transport : TransportSpec
    t : float
        Geodesic time, ``0 <= t``.
    radii : array_like
        Positive base radii ``r`` at which to evaluate.

    Returns
    -------
    s : ndarray
        Image radii ``T_t(r)``.
    density : ndarray
        Pushforward density at ``s``.

    Raises
    ------
    ValueError
        If ``T_t`` is not strictly increasing on the sampled radii.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    r = np.asarray(radii, dtype=float)
    if np.any(r <= 0):
        raise ValueError("radii must be positive")
    tau = t / transport.t0
    h = rel_step * r
    s = (1.0 - tau) * r + tau * transport.psi_prime(r)
    sp = (1.0 - tau) * (r + h) + tau * transport.psi_prime(r + h)
    sm = (1.0 - tau) * (r - h) + tau * transport.psi_prime(r - h)
    jac = (sp - sm) / (2.0 * h)
    if np.any(jac <= 0) or np.any(np.diff(s[np.argsort(r)]) <= 0):
        raise ValueError(f"T_t is not injective at t={t}; beyond the cut locus")
    d = transport.d
    dens = transport.C(r) * (r / s) ** (d - 1) / jac
    return s, dens


def _eta_jacobians(eta_lat: np.ndarray, A: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Central-difference Jacobians of ``A^T eta`` at interior lattice points, shape (N, d, d).

    After the shift index 0 is the Nyquist row, zeroed by the odd projection,
    so stencils touching it are excluded.
    """
    d = grid.d
    eta_c = np.fft.fftshift(eta_lat, axes=tuple(range(1, d + 1)))
    if not np.all(np.isfinite(eta_c)):
        raise ValueError("eta has non-finite values")
    inner = (slice(2, -1),) * d
    cols = []
    for j in range(d):
        fwd = np.roll(eta_c, -1, axis=j + 1)
        bwd = np.roll(eta_c, 1, axis=j + 1)
        cols.append(((fwd - bwd) / (2.0 * grid.dk))[(slice(None),) + inner])
    # D[p, j] = d eta_p / d k_j
    D = np.stack(cols, axis=1).reshape(d, d, -1)
    M = np.einsum("qp,qjn->npj", A, D)
    if not np.all(np.isfinite(M)):
        raise ValueError("finite differences of eta are not finite")
    return M


def cut_locus_profile(eta_lat: np.ndarray, A, grid: GridSpec, c: float) -> np.ndarray:
    """Minimum eigenvalue of the symmetrized Jacobian over both signs at each interior k."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    M = _eta_jacobians(eta_lat, A, grid)
    sym = 0.5 * (M + np.swapaxes(M, 1, 2))
    ev = np.linalg.eigvalsh(sym)
    return np.minimum(1.0 + c * ev[:, 0], 1.0 - c * ev[:, -1])


def cut_locus_c0(eta_lat: np.ndarray, A, grid: GridSpec, tol: float | None = None, *,
                 asym_tol: float = 1e-2, rtol: float = 1e-4) -> float:
    """Largest ``c`` for which both maps ``k -> k +/- c A^T eta_k`` stay convex gradients.

    At every interior lattice point the central-difference Jacobian
    ``I +/- c A^T D eta`` must have a symmetric part with minimum eigenvalue
    above ``tol`` and an antisymmetric part with norm below ``asym_tol``.
    Feasibility is monotone in ``c``, so ``c`` is located by bisection.

    Parameters
    ----------
    eta_lat : ndarray, shape (d, ...)
        Transport field on the lattice.
    A : array_like, shape (d, d)
    grid : GridSpec
    tol : float, optional
        Eigenvalue floor, default ``1e-6 * ||A|| * max|D eta|``.
    asym_tol : float
        Bound on the antisymmetric part of the Jacobian.
    rtol : float
        Relative bisection tolerance.

    Returns
    -------
    float
        ``c0``, or ``inf`` when ``eta`` has a vanishing Jacobian.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    M = _eta_jacobians(eta_lat, A, grid)
    scale = float(np.max(np.abs(M))) if M.size else 0.0
    if scale == 0.0:
        return float("inf")
    if tol is None:
        tol = 1e-6 * np.linalg.norm(A, 2) * scale
    sym = 0.5 * (M + np.swapaxes(M, 1, 2))
    asym = float(np.max(np.linalg.norm(0.5 * (M - np.swapaxes(M, 1, 2)), ord=2, axis=(1, 2))))
    ev = np.linalg.eigvalsh(sym)
    lo_ev, hi_ev = float(np.min(ev[:, 0])), float(np.max(ev[:, -1]))

    def feasible(c: float) -> bool:
        min_eig = min(1.0 + c * lo_ev, 1.0 - c * hi_ev)
        return min_eig > tol and c * asym < asym_tol

    lo, hi = 0.0, 1.0 / scale
    while feasible(hi):
        lo, hi = hi, 2.0 * hi
        if hi > 1e300:
            return float("inf")
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            lo = mid
        else:
            hi = mid
    return lo
