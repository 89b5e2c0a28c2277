"""Simulation of the potential, the phase-modulated field and observation noise.

The nonstationary field is the Riemann sum

    Z(x) = Re sum_k exp(i x.k + i theta(x).eta_k) sqrt(C_k) W_k / (2 pi)^{d/2}

with Hermitian white noise ``W`` (``E|W_k|^2 = dk^d``).  It costs
``O(N^2)`` for ``N`` pixels and is evaluated in fixed-size pixel chunks so
the result does not depend on how chunks are scheduled.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .errors import CostCapError
from .grid import GridSpec, fft, ifft, white_noise_fourier

__all__ = [
    "SIMULATE_CAP",
    "CHUNK_ROWS",
    "stationary_field",
    "simulate_phi",
    "theta_from_phi",
    "simulate_Z",
    "simulate_Z_tilde",
    "add_noise",
]

SIMULATE_CAP = 200_000
CHUNK_ROWS = 256


def stationary_field(C_lat: np.ndarray, W: np.ndarray, grid: GridSpec) -> np.ndarray:
    """FFT synthesis of a real stationary field with spectrum ``C`` from noise ``W``.

    The Fourier coefficients are ``sqrt(C) W / dk^d`` so that
    ``E|Z_k|^2 = delta0 C_k``.
    """
    Zk = np.sqrt(C_lat) * W / grid.dk**grid.d
    return np.real(ifft(Zk, grid))


def simulate_phi(prior_lat: np.ndarray, grid: GridSpec, rng: np.random.Generator) -> np.ndarray:
    """Draw a real stationary Gaussian potential with spectrum ``prior_lat``."""
    return stationary_field(prior_lat, white_noise_fourier(grid, rng), grid)


def theta_from_phi(phi: np.ndarray, xi_lat: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Vector field ``theta_p = ifft(xi_p fft(phi))``, shape ``(d, *shape)``.

    ``xi`` is Hermitian so the result is real; the imaginary residual is dropped.
    """
    phik = fft(phi, grid)
    return np.real(ifft(xi_lat * phik, grid))


def _check_cap(grid: GridSpec, cap: int, force: bool) -> None:
    if grid.size > cap and not force:
        raise CostCapError(
            f"direct simulation over {grid.size} pixels exceeds the cap of {cap}; pass force to override"
        )


def _direct_sum(amp: np.ndarray, phase_fn, n_pix: int, workers: int, want_imag: bool):
    """Evaluate ``sum_k exp(i phase(x, k)) amp_k`` for all pixels in fixed chunks."""
    m = amp.shape[1]
    out = np.empty((n_pix, m))
    imag_sq = np.zeros(1)
    ar = np.ascontiguousarray(amp.real)
    ai = np.ascontiguousarray(amp.imag)
    starts = list(range(0, n_pix, CHUNK_ROWS))
    imag_parts = [0.0] * len(starts)

    def work(idx: int) -> None:
        s = starts[idx]
        sl = slice(s, min(s + CHUNK_ROWS, n_pix))
        ph = phase_fn(sl)
        c = np.cos(ph)
        sn = np.sin(ph)
        out[sl] = c @ ar - sn @ ai
        if want_imag:
            imag_parts[idx] = float(np.sum((sn @ ar[:, :1] + c @ ai[:, :1]) ** 2))

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            list(ex.map(work, range(len(starts))))
    else:
        for i in range(len(starts)):
            work(i)
    imag_sq[0] = sum(imag_parts)
    return out, float(np.sqrt(imag_sq[0] / n_pix))


def simulate_Z(C_lat: np.ndarray, eta_lat: np.ndarray, theta: np.ndarray, grid: GridSpec,
               W: np.ndarray, *, cutoff: float | None = None, cap: int = SIMULATE_CAP,
               force: bool = False, workers: int = 1, diagnostics: dict | None = None) -> np.ndarray:
    """Simulate the spectral phase field by direct summation.

    Parameters
    ----------
    C_lat : ndarray
        Base spectrum on the lattice.
    eta_lat : ndarray, shape (d, *shape)
        Transport field on the lattice.
    theta : ndarray, shape (d, *shape)
        Real nonstationarity field in pixel space.
    grid : GridSpec
    W : ndarray
        Hermitian white noise, shape ``shape`` or ``(M, *shape)`` for a batch
        sharing the same ``theta``.
    cutoff : float, optional
        Drop frequencies with ``|k| > cutoff``.
    cap, force :
        Pixel-count cap and its override.
    workers : int
        Threads used over pixel chunks; the output does not depend on it.
    diagnostics : dict, optional
        Receives ``imag_rms`` and ``rms`` for the first field of the batch.

    Returns
    -------
    ndarray
        Real field(s) with the shape of ``W``.
    """
    d = grid.d
    batch = W.ndim == d + 1
    Wb = W if batch else W[None]
    amp_lat = np.sqrt(C_lat) / (2.0 * np.pi) ** (d / 2)
    if cutoff is not None:
        amp_lat = np.where(grid.kabs <= cutoff, amp_lat, 0.0)
    if not np.any(theta) or not np.any(eta_lat):
        # no modulation: the sum is exactly the stationary FFT synthesis
        Z = np.stack([stationary_field(amp_lat**2 * (2.0 * np.pi) ** d, w, grid) for w in Wb])
        if diagnostics is not None:
            diagnostics.update(imag_rms=0.0, rms=float(np.sqrt(np.mean(Z[0] ** 2))))
        return Z if batch else Z[0]
    _check_cap(grid, cap, force)
    n_pix = grid.size
    keep = amp_lat.reshape(-1) > 0
    kk = grid.k.reshape(d, -1)[:, keep]
    et = eta_lat.reshape(d, -1)[:, keep]
    xx = grid.x.reshape(d, -1)
    th = theta.reshape(d, -1)
    amp = (amp_lat.reshape(-1)[keep][:, None] * Wb.reshape(Wb.shape[0], -1)[:, keep].T)

    def phase_fn(sl):
        return xx[:, sl].T @ kk + th[:, sl].T @ et

    out, imag_rms = _direct_sum(amp, phase_fn, n_pix, workers, diagnostics is not None)
    Z = out.T.reshape(Wb.shape)
    if diagnostics is not None:
        diagnostics.update(imag_rms=imag_rms, rms=float(np.sqrt(np.mean(Z[0] ** 2))))
    return Z if batch else Z[0]


def simulate_Z_tilde(C_lat: np.ndarray, phi: np.ndarray, grid: GridSpec, W: np.ndarray, *,
                     cap: int = SIMULATE_CAP, force: bool = False, workers: int = 1) -> np.ndarray:
    """Amplitude-modulated comparison field (d=1).

    ``Ztilde(t) = Re sum_k exp(i t k) exp(phi(t) |k|) sqrt(C_k) W_k / sqrt(2 pi)``.
    This modulation is not locally invariant.
    """
    if grid.d != 1:
        raise ValueError("the amplitude-modulated comparison field is defined for d=1 only")
    batch = W.ndim == 2
    Wb = W if batch else W[None]
    if not np.any(phi):
        Z = np.stack([stationary_field(C_lat, w, grid) for w in Wb])
        return Z if batch else Z[0]
    _check_cap(grid, cap, force)
    k = grid.k1d
    x = grid.x1d
    amp = (np.sqrt(C_lat) / np.sqrt(2.0 * np.pi))[:, None] * Wb.T
    absk = np.abs(k)
    n = grid.n
    out = np.empty((n, Wb.shape[0]))
    for s in range(0, n, CHUNK_ROWS):
        sl = slice(s, min(s + CHUNK_ROWS, n))
        ph = np.outer(x[sl], k)
        mod = np.exp(np.outer(phi[sl], absk))
        out[sl] = (mod * np.cos(ph)) @ amp.real - (mod * np.sin(ph)) @ amp.imag
    Z = out.T
    return Z if batch else Z[0]


def add_noise(Z: np.ndarray, CNN_lat: np.ndarray, grid: GridSpec, rng: np.random.Generator) -> np.ndarray:
    """Add independent stationary Gaussian noise with spectrum ``CNN_lat``; no-op if it vanishes."""
    if not np.any(CNN_lat):
        return Z
    batch = Z.ndim == grid.d + 1
    W = white_noise_fourier(grid, rng, size=Z.shape[0] if batch else None)
    return Z + stationary_field(CNN_lat, W, grid)
