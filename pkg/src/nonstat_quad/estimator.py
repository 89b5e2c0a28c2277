"""Quadratic estimate of the nonstationarity potential.

For a kernel ``g_{k,l} = xi_l . (F_k + s F_{k+l})`` and inverse-variance
weights ``w_k = 1/C^{ZZobs}_k`` (zero on masked frequencies) the estimate is

    phihat_l = A_l sum_k conj(g_{k,l}) Z_{k+l} Z_{-k} w_{k+l} w_k dk^d/(2 pi)^{d/2},

with ``A_l^{-1} = sum_k |g_{k,l}|^2 w_{k+l} w_k dk^d/(2 pi)^{d/2}``.  The
locally invariant estimator uses ``F = C^(1)`` and ``s = -1``; the
amplitude-modulated comparison estimator uses ``F = |C^(1)|`` and ``s = +1``.

Every sum over ``k`` at fixed lag ``l`` is a cyclic correlation and is
evaluated with FFTs through :func:`lag_product`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np

from .errors import CostCapError
from .grid import GridSpec, fft, ifft, reflect
from .spectra import PhaseModel

__all__ = [
    "DIRECT_CAP",
    "EstimatorKernel",
    "lag_product",
    "nyquist_mask",
    "normalization",
    "normalization_direct",
    "estimate_fast",
    "estimate_direct",
    "estimate_tilde",
    "apply_weighting",
    "apply_weighting_direct",
    "weight_k_raw",
]

DIRECT_CAP = 2**12
VARIANTS = ("local_invariant", "tilde")


def lag_product(a: np.ndarray, b: np.ndarray, grid: GridSpec) -> np.ndarray:
    """``P[a, b]_l = sum_k a_{k+l} b_{-k} dk^d / (2 pi)^{d/2}`` on the periodic lattice.

    Leading axes broadcast as a batch.
    """
    axes = tuple(range(-grid.d, 0))
    conv = np.fft.fftn(np.fft.ifftn(a, axes=axes) * np.fft.ifftn(b, axes=axes), axes=axes)
    return conv * (grid.size * grid.dk**grid.d / (2.0 * np.pi) ** (grid.d / 2))


def nyquist_mask(grid: GridSpec, fraction: float) -> np.ndarray:
    """Mask the ``fraction`` of lattice frequencies nearest the Nyquist limit.

    Frequencies are ranked by the per-axis max-norm of their integer index.
    All frequencies tied with the cut-off radius are masked, so the mask stays
    symmetric under ``k -> -k`` and may slightly exceed the requested count.

    Returns
    -------
    ndarray of bool
        ``True`` where a frequency is excluded.
    """
    if not 0 <= fraction < 1:
        raise ValueError("fraction must lie in [0, 1)")
    idx = np.abs(np.stack(np.meshgrid(*([grid.index1d] * grid.d), indexing="ij")))
    radius = idx.max(axis=0)
    m = int(round(fraction * grid.size))
    if m == 0:
        return np.zeros(grid.shape, dtype=bool)
    thresh = np.sort(radius.ravel())[::-1][m - 1]
    return radius >= thresh


@dataclass(frozen=True, eq=False)
class EstimatorKernel:
    """Estimator weights and normalization for a phase model.

    Parameters
    ----------
    model : PhaseModel
    variant : {"local_invariant", "tilde"}
    mask : ndarray of bool, optional
        Frequencies excluded from every pair they enter.
    """

    model: PhaseModel
    variant: str = "local_invariant"
    mask: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")

    @property
    def grid(self) -> GridSpec:
        return self.model.grid

    @property
    def d(self) -> int:
        return self.model.d

    @property
    def sign(self) -> float:
        return -1.0 if self.variant == "local_invariant" else 1.0

    @cached_property
    def F(self) -> np.ndarray:
        """First-order coefficient entering the kernel, shape (d, ...)."""
        C1 = self.model.C1
        return C1 if self.variant == "local_invariant" else np.abs(C1).astype(complex)

    @cached_property
    def G(self) -> np.ndarray:
        """Second-order coefficient, shape (d, d, ...)."""
        C2 = self.model.C2
        return C2 if self.variant == "local_invariant" else -C2

    def G_func(self, kvec: np.ndarray) -> np.ndarray:
        """Second-order coefficient evaluated off the lattice, shape (d, d, ...)."""
        m = self.model
        eta = m.eta(kvec)
        C = m.C.on_vectors(kvec)
        C2 = -eta[:, None] * eta[None, :] * C / (2.0 * (2.0 * np.pi) ** (m.d / 2))
        return C2 if self.variant == "local_invariant" else -C2

    @property
    def xi(self) -> np.ndarray:
        return self.model.xi_lat

    @cached_property
    def w(self) -> np.ndarray:
        """Inverse-variance weights, zero on masked frequencies."""
        czz = self.model.CZZobs
        if np.any(~(czz > 0)):
            raise ValueError("marginal observation spectrum must be positive on the lattice")
        w = 1.0 / czz
        if self.mask is not None:
            w = np.where(self.mask, 0.0, w)
        return w

    def weighted_norm(self, wa: np.ndarray, wb: np.ndarray | None = None) -> np.ndarray:
        """``sum_k |g_{k,l}|^2 wa_{k+l} wb_k dk^d/(2 pi)^{d/2}`` for even weights."""
        wb = wa if wb is None else wb
        g = self.grid
        F, xi, s = self.F, self.xi, self.sign
        total = np.zeros(g.shape, dtype=complex)
        for p in range(self.d):
            for q in range(self.d):
                FF = F[p] * np.conj(F[q])
                Fq = np.conj(F[q])
                term = (
                    lag_product(wa, reflect(FF * wb, g.d), g)
                    + lag_product(FF * wa, wb, g)
                    + s * lag_product(Fq * wa, reflect(F[p] * wb, g.d), g)
                    + s * lag_product(F[p] * wa, reflect(Fq * wb, g.d), g)
                )
                total += xi[p] * np.conj(xi[q]) * term
        return np.real(total)

    @cached_property
    def Ainv(self) -> np.ndarray:
        return self.weighted_norm(self.w)

    @cached_property
    def valid(self) -> np.ndarray:
        """Frequencies where the normalization is defined.

        Requires ``l != 0``, a nonzero ``xi_l``, at least one unmasked pair
        ``(k, k+l)`` and ``A^{-1} > 0``.  The support test is structural
        because ``A^{-1}`` spans many decades and a relative floor would
        discard well-resolved low frequencies.
        """
        g = self.grid
        on = (self.w > 0).astype(float)
        # lag_product carries the measure factor; undo it to count pairs
        meas = g.dk**g.d / (2.0 * np.pi) ** (g.d / 2)
        pairs = np.real(lag_product(on, reflect(on, g.d), g)) / meas
        xi_nz = np.any(np.abs(self.xi) > 0, axis=0)
        ok = (pairs > 0.5) & xi_nz & (self.Ainv > 0)
        ok[(0,) * self.d] = False
        return ok

    @cached_property
    def A(self) -> np.ndarray:
        """Normalization ``A_l``; zero where :attr:`valid` is False."""
        out = np.zeros(self.grid.shape)
        out[self.valid] = 1.0 / self.Ainv[self.valid]
        return out

    def kernel_matrix(self) -> np.ndarray:
        """Dense kernel ``g[l, k]`` over flattened lattice indices (small grids only)."""
        lk = _lag_index(self.grid)
        d = self.d
        F = self.F.reshape(d, -1)
        xi = self.xi.reshape(d, -1)
        N = self.grid.size
        out = np.zeros((N, N), dtype=complex)
        for p in range(d):
            out += xi[p][:, None] * (F[p][None, :] + self.sign * F[p][lk])
        return out


def _lag_index(grid: GridSpec) -> np.ndarray:
    """Flat lattice index of ``k + l`` as an array ``[l, k]``."""
    n, d = grid.n, grid.d
    idx = np.indices(grid.shape).reshape(d, -1)
    shifted = (idx[:, :, None] + idx[:, None, :]) % n  # [axis, l, k]
    return np.ravel_multi_index(tuple(shifted), grid.shape)


def _neg_index(grid: GridSpec) -> np.ndarray:
    idx = np.indices(grid.shape).reshape(grid.d, -1)
    return np.ravel_multi_index(tuple((-idx) % grid.n), grid.shape)


def normalization(model: PhaseModel, mask: np.ndarray | None = None, variant: str = "local_invariant") -> np.ndarray:
    """Normalization ``A_l`` by the FFT route; invalid frequencies hold zero."""
    return EstimatorKernel(model, variant, mask).A


def normalization_direct(kernel: EstimatorKernel, cap: int = DIRECT_CAP) -> np.ndarray:
    """``A_l^{-1}`` by explicit summation over ``k`` for every ``l``."""
    grid = kernel.grid
    if grid.size > cap:
        raise CostCapError(f"direct normalization over {grid.size} lattice points exceeds cap {cap}")
    g = kernel.kernel_matrix()
    w = kernel.w.reshape(-1)
    lk = _lag_index(grid)
    meas = grid.dk**grid.d / (2.0 * np.pi) ** (grid.d / 2)
    return (np.sum(np.abs(g) ** 2 * w[lk] * w[None, :], axis=1) * meas).reshape(grid.shape)


def _pair_sum(kernel: EstimatorKernel, Xw: np.ndarray, Yw: np.ndarray) -> np.ndarray:
    """``sum_k conj(g_{k,l}) (Xw)_{k+l} (Yw)_{-k} dk^d/(2 pi)^{d/2}`` by FFT."""
    grid = kernel.grid
    d = grid.d
    out = 0
    for p in range(d):
        Fs = np.conj(kernel.F[p])
        inner = lag_product(Xw, reflect(Fs, d) * Yw, grid) + kernel.sign * lag_product(Fs * Xw, Yw, grid)
        out = out + np.conj(kernel.xi[p]) * inner
    return out


def _finish(kernel: EstimatorKernel, raw: np.ndarray) -> np.ndarray:
    return np.where(kernel.valid, kernel.A * raw, 0.0)


def estimate_fast(Zobs: np.ndarray, kernel: EstimatorKernel) -> np.ndarray:
    """FFT evaluation of the quadratic estimate.

    Parameters
    ----------
    Zobs : ndarray
        Real pixel field, or a batch with leading axis.
    kernel : EstimatorKernel

    Returns
    -------
    ndarray
        Fourier coefficients ``phihat_l``; zero where ``kernel.valid`` is False.
    """
    Zk = fft(Zobs, kernel.grid)
    Zw = Zk * kernel.w
    return _finish(kernel, _pair_sum(kernel, Zw, Zw))


def estimate_direct(Zobs: np.ndarray, kernel: EstimatorKernel, cap: int = DIRECT_CAP) -> np.ndarray:
    """Literal double sum over ``(l, k)``; reference implementation for small grids."""
    grid = kernel.grid
    if grid.size > cap:
        raise CostCapError(f"direct estimate over {grid.size} lattice points exceeds cap {cap}")
    Zk = fft(Zobs, grid).reshape(-1)
    g = kernel.kernel_matrix()
    w = kernel.w.reshape(-1)
    lk = _lag_index(grid)
    neg = _neg_index(grid)
    meas = grid.dk**grid.d / (2.0 * np.pi) ** (grid.d / 2)
    terms = np.conj(g) * Zk[lk] * Zk[neg][None, :] * w[lk] * w[None, :]
    raw = (terms.sum(axis=1) * meas).reshape(grid.shape)
    return _finish(kernel, raw)


def estimate_tilde(Zobs: np.ndarray, kernel: EstimatorKernel) -> np.ndarray:
    """Comparison estimate for the amplitude-modulated field (plus-sign kernel, d=1)."""
    if kernel.variant != "tilde":
        raise ValueError("estimate_tilde needs a kernel with variant='tilde'")
    if kernel.d != 1:
        raise ValueError("the comparison estimator is defined for d=1")
    return estimate_fast(Zobs, kernel)


def apply_weighting(X, kernel: EstimatorKernel, Y: np.ndarray | None = None) -> np.ndarray:
    """Apply the estimator's weighting to a function other than ``Z_{k+l} Z_{-k}``.

    Forms
    -----
    ``X`` array over the lattice, ``Y`` None
        ``X`` depends on ``k`` only: ``A_l sum_k conj(g) X_k w_{k+l} w_k``.
    ``X`` and ``Y`` arrays over the lattice
        Pair form: ``A_l sum_k conj(g) X_{k+l} Y_{-k} w_{k+l} w_k``.
    ``X`` 2-D array ``[l, k]`` over flattened indices, or a callable
        returning one from ``(l_index, k_index)``; evaluated by brute force.

    All sums carry the measure ``dk^d/(2 pi)^{d/2}``.  Leading batch axes of
    lattice arrays are supported.
    """
    grid = kernel.grid
    N = grid.size
    if callable(X) or (np.shape(X) == (N, N) and np.shape(X) != grid.shape):
        return apply_weighting_direct(X, kernel)
    X = np.asarray(X)
    if Y is not None:
        w = kernel.w
        return _finish(kernel, _pair_sum(kernel, X * w, np.asarray(Y) * w))
    return _finish(kernel, weight_k_raw(X, kernel))


def weight_k_raw(X: np.ndarray, kernel: EstimatorKernel) -> np.ndarray:
    """Unnormalized ``sum_k conj(g_{k,l}) X_k w_{k+l} w_k dk^d/(2 pi)^{d/2}``; batches allowed."""
    grid = kernel.grid
    d = grid.d
    w = kernel.w
    Xw = X * w
    RXw = reflect(Xw, d)
    out = 0
    for p in range(d):
        Fs = np.conj(kernel.F[p])
        inner = lag_product(w, reflect(Fs * Xw, d), grid) + kernel.sign * lag_product(Fs * w, RXw, grid)
        out = out + np.conj(kernel.xi[p]) * inner
    return out


def apply_weighting_direct(X, kernel: EstimatorKernel, cap: int = DIRECT_CAP) -> np.ndarray:
    """Brute-force weighting of a two-argument function ``X[l, k]``."""
    grid = kernel.grid
    if grid.size > cap:
        raise CostCapError(f"direct weighting over {grid.size} lattice points exceeds cap {cap}")
    N = grid.size
    if callable(X):
        ll, kk = np.meshgrid(np.arange(N), np.arange(N), indexing="ij")
        X = np.asarray(X(ll, kk))
    X = np.asarray(X).reshape(N, N)
    g = kernel.kernel_matrix()
    w = kernel.w.reshape(-1)
    lk = _lag_index(grid)
    meas = grid.dk**grid.d / (2.0 * np.pi) ** (grid.d / 2)
    raw = (np.sum(np.conj(g) * X * w[lk] * w[None, :], axis=1) * meas).reshape(grid.shape)
    return _finish(kernel, raw)
