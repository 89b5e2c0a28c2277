"""Variance and second-order bias spectra of the quadratic estimate.

Notation: ``Phi_pq(l, w) = phihat_l{G_pq,k + s G_pq,k+w}`` is the estimator
weighting applied to the second-order coefficient shifted by ``w``; for the
locally invariant kernel ``s = -1`` and ``G = C^(2)``.  The second-order bias
map and its spectrum are

    phihat^bias_l = 2 sum_pq sum_w theta_p,w theta_q,l-w Phi_pq(l, w) dw^d/(2 pi)^{d/2}

    C^bias_l = 4 sum_{pqp'q'} sum_w (Ct_pp'(w) Ct_qq'(l-w) + Ct_pq'(w) Ct_qp'(l-w))
               Phi_pq(l, w) conj(Phi_p'q'(l, w)) dw^d/(2 pi)^d

The exact spectrum loops over ``w`` (``O(N^2 log N)``); the fast spectrum
Taylor-expands ``Phi`` to second order in ``w`` and reduces the ``w`` sum to
FFT convolutions of moment-weighted ``C^{theta theta}``.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .errors import CostCapError
from .estimator import EstimatorKernel, _lag_index, weight_k_raw
from .grid import GridSpec, hermitian_project, odd_project

__all__ = [
    "BIAS_CAP",
    "ErrorSpectra",
    "crossover_spectrum",
    "var_spectrum",
    "var_spectrum_direct",
    "bias_map",
    "bias_spectrum_exact",
    "bias_spectrum_fast",
    "taylor_coefficients",
    "G_derivatives",
]

BIAS_CAP = 2**13
_OMEGA_CHUNK = 64


@dataclass
class ErrorSpectra:
    """Bundle of analytic error spectra with their provenance."""

    Cvar: np.ndarray
    Cbias: np.ndarray | None
    bias_kind: str | None
    cxx: str
    meta: dict


def crossover_spectrum(kernel: EstimatorKernel, cxx) -> np.ndarray:
    """Spectral density ``C^{XX}`` of the Gaussian proxy for shape and observation noise.

    ``cxx`` may be ``"matched"`` (equal to ``C^{ZZobs}``), ``"option1"``
    (``C^{NN} + C``), ``"option2"`` (``C^{NN}`` plus the phase-averaged
    spectrum) or an explicit lattice array.
    """
    model = kernel.model
    if isinstance(cxx, str):
        if cxx == "matched":
            return model.CZZobs
        if cxx == "option1":
            return model.C_lat + model.CNN
        if cxx == "option2":
            return model.replace(marginal="option2").CZZobs
        raise ValueError(f"unknown CXX option {cxx!r}")
    return np.asarray(cxx, dtype=float)


def var_spectrum(kernel: EstimatorKernel, cxx="matched") -> np.ndarray:
    """Variance spectrum ``C^var_l = 2 A_l^2 sum_k |g|^2 w'_{k+l} w'_k dk^d/(2 pi)^d``.

    Here ``w' = C^{XX} w^2``.  Invalid frequencies hold zero.
    """
    d = kernel.d
    if isinstance(cxx, str) and cxx == "matched":
        norm = kernel.Ainv
    else:
        wp = crossover_spectrum(kernel, cxx) * kernel.w**2
        norm = kernel.weighted_norm(wp)
    out = 2.0 * kernel.A**2 * norm / (2.0 * np.pi) ** (d / 2)
    return np.where(kernel.valid, out, 0.0)


def var_spectrum_direct(kernel: EstimatorKernel, cxx="matched", cap: int = 2**12) -> np.ndarray:
    """Variance spectrum by explicit summation over ``k`` (small grids)."""
    grid = kernel.grid
    if grid.size > cap:
        raise CostCapError(f"direct variance over {grid.size} lattice points exceeds cap {cap}")
    wp = (crossover_spectrum(kernel, cxx) * kernel.w**2).reshape(-1)
    g = kernel.kernel_matrix()
    lk = _lag_index(grid)
    s = np.sum(np.abs(g) ** 2 * wp[lk] * wp[None, :], axis=1).reshape(grid.shape)
    out = 2.0 * kernel.A**2 * s * grid.dk**grid.d / (2.0 * np.pi) ** grid.d
    return np.where(kernel.valid, out, 0.0)


def _shift_index(grid: GridSpec, omegas: np.ndarray) -> np.ndarray:
    """Flat index of ``k + w`` for each ``w`` in ``omegas`` (flat indices); shape (len, N)."""
    d, n = grid.d, grid.n
    idx = np.indices(grid.shape).reshape(d, -1)
    om = np.stack(np.unravel_index(omegas, grid.shape))
    shifted = (idx[:, None, :] + om[:, :, None]) % n
    return np.ravel_multi_index(tuple(shifted), grid.shape)


def _diff_index(grid: GridSpec, omegas: np.ndarray) -> np.ndarray:
    """Flat index of ``l - w`` for each ``w``; shape (len, N)."""
    d, n = grid.d, grid.n
    idx = np.indices(grid.shape).reshape(d, -1)
    om = np.stack(np.unravel_index(omegas, grid.shape))
    shifted = (idx[:, None, :] - om[:, :, None]) % n
    return np.ravel_multi_index(tuple(shifted), grid.shape)


def _check_bias_cap(grid: GridSpec, cap: int) -> None:
    if grid.size > cap:
        raise CostCapError(
            f"exact bias needs O(N^2) work for N={grid.size} lattice points (cap {cap}); "
            "use the fast Taylor approximation instead"
        )


def _phi_chunks(kernel: EstimatorKernel, chunk: int = _OMEGA_CHUNK):
    """Yield ``(omegas, Phi)`` with ``Phi`` of shape (chunk, d, d, N), normalization included."""
    grid = kernel.grid
    d, N = grid.d, grid.size
    G = kernel.G.reshape(d, d, N)
    s = kernel.sign
    A = kernel.A.reshape(N)
    for start in range(0, N, chunk):
        om = np.arange(start, min(start + chunk, N))
        sh = _shift_index(grid, om)  # (c, N)
        X = G[None] + s * G[:, :, sh].transpose(2, 0, 1, 3)  # (c, d, d, N)
        raw = weight_k_raw(X.reshape(X.shape[:-1] + grid.shape), kernel).reshape(len(om), d, d, N)
        yield om, raw * A


def bias_map(theta_k: np.ndarray, kernel: EstimatorKernel, cap: int = BIAS_CAP) -> np.ndarray:
    """Exact second-order bias map for a given ``theta`` (Fourier coefficients, shape (d, ...))."""
    grid = kernel.grid
    _check_bias_cap(grid, cap)
    d, N = grid.d, grid.size
    th = np.asarray(theta_k).reshape(d, N)
    out = np.zeros(N, dtype=complex)
    meas = grid.dk**d / (2.0 * np.pi) ** (d / 2)
    for om, Phi in _phi_chunks(kernel):
        diff = _diff_index(grid, om)  # (c, N): index of l - w
        t_w = th[:, om]  # (p, c)
        t_lw = th[:, diff]  # (q, c, N)
        out += np.einsum("pc,qcl,cpql->l", t_w, t_lw, Phi)
    out = 2.0 * meas * out
    return np.where(kernel.valid, out.reshape(grid.shape), 0.0)


def bias_spectrum_exact(kernel: EstimatorKernel, Ctheta: np.ndarray | None = None, cap: int = BIAS_CAP) -> np.ndarray:
    """Exact second-order bias spectrum by explicit summation over ``w``."""
    grid = kernel.grid
    _check_bias_cap(grid, cap)
    d, N = grid.d, grid.size
    Ct = (kernel.model.Ctheta if Ctheta is None else Ctheta).reshape(d, d, N)
    acc = np.zeros(N, dtype=complex)
    for om, Phi in _phi_chunks(kernel):
        diff = _diff_index(grid, om)
        Cw = Ct[:, :, om]  # (p, p', c)
        Clw = Ct[:, :, diff]  # (q, q', c, N)
        Phic = np.conj(Phi)
        acc += np.einsum("prc,qscl,cpql,crsl->l", Cw, Clw, Phi, Phic)
        acc += np.einsum("psc,qrcl,cpql,crsl->l", Cw, Clw, Phi, Phic)
    out = 4.0 * np.real(acc) * grid.dk**d / (2.0 * np.pi) ** d
    return np.where(kernel.valid, out.reshape(grid.shape), 0.0)


def _lattice_d1(f: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Fourth-order periodic central first difference along ``axis``."""
    return (8.0 * (np.roll(f, -1, axis) - np.roll(f, 1, axis)) - (np.roll(f, -2, axis) - np.roll(f, 2, axis))) / (12.0 * h)


def _lattice_d2(f: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Fourth-order periodic central second difference along ``axis``."""
    return (16.0 * (np.roll(f, -1, axis) + np.roll(f, 1, axis)) - (np.roll(f, -2, axis) + np.roll(f, 2, axis))
            - 30.0 * f) / (12.0 * h**2)


def _continuous_derivatives(kernel: EstimatorKernel, k: np.ndarray, h: float):
    """Central differences of the closed-form coefficient at frequency vectors ``k`` (d, m)."""
    d = kernel.d
    e = np.eye(d)[:, :, None]
    G0 = kernel.G_func(k)
    Gp = [kernel.G_func(k + h * e[i]) for i in range(d)]
    Gm = [kernel.G_func(k - h * e[i]) for i in range(d)]
    grad = np.stack([(Gp[i] - Gm[i]) / (2 * h) for i in range(d)], axis=2)
    hess = np.empty((d, d, d, d, k.shape[1]))
    for i in range(d):
        hess[:, :, i, i] = (Gp[i] - 2 * G0 + Gm[i]) / h**2
        for j in range(i + 1, d):
            pp = kernel.G_func(k + h * (e[i] + e[j]))
            pm = kernel.G_func(k + h * (e[i] - e[j]))
            mp = kernel.G_func(k - h * (e[i] - e[j]))
            mm = kernel.G_func(k - h * (e[i] + e[j]))
            hess[:, :, i, j] = hess[:, :, j, i] = (pp - pm - mp + mm) / (4 * h**2)
    return grad, hess


def _lattice_derivatives(kernel: EstimatorKernel, rel_step: float):
    grid = kernel.grid
    d = grid.d
    G = np.real(kernel.G)
    h = grid.dk
    ax = [2 + i for i in range(d)]  # lattice axes of G, shape (d, d, ...)
    grad = np.stack([_lattice_d1(G, ax[i], h) for i in range(d)], axis=2)
    hess = np.empty((d, d, d, d) + grid.shape)
    for i in range(d):
        hess[:, :, i, i] = _lattice_d2(G, ax[i], h)
        for j in range(i + 1, d):
            hess[:, :, i, j] = hess[:, :, j, i] = _lattice_d1(grad[:, :, i], ax[j], h)
    # the lattice coefficient vanishes on Nyquist rows, so stencils reaching
    # them fall back to differences of the closed form
    idx = np.abs(np.stack(np.meshgrid(*([grid.index1d] * d), indexing="ij")))
    edge = np.any(idx >= grid.n // 2 - 2, axis=0)
    if np.any(edge):
        kv = grid.k[:, edge]
        ge, he = _continuous_derivatives(kernel, kv, rel_step * grid.dk)
        grad[..., edge] = ge
        hess[..., edge] = he
    return grad, hess


def G_derivatives(kernel: EstimatorKernel, method: str = "lattice",
                  rel_step: float = 0.02) -> tuple[np.ndarray, np.ndarray]:
    """Gradient and Hessian of the second-order coefficient on the lattice.

    ``method="lattice"`` applies fourth-order periodic central differences to
    the lattice coefficient, costing a few array passes; points within two
    steps of a Nyquist row use the closed form instead.  ``"continuous"``
    differences the closed-form coefficient with step ``rel_step * dk``
    everywhere, which evaluates the transport field off the lattice.  The gradient is made
    exactly odd and the Hessian exactly even on the lattice.

    Returns
    -------
    grad : ndarray, shape (d, d, d, ...)
        ``grad[p, q, i] = d G_pq / d k_i``.
    hess : ndarray, shape (d, d, d, d, ...)
        ``hess[p, q, i, j] = d^2 G_pq / d k_i d k_j``.
    """
    key = (method, rel_step)
    cache = kernel.__dict__.setdefault("_G_derivs", {})
    if key in cache:
        return cache[key]
    if method == "lattice":
        grad, hess = _lattice_derivatives(kernel, rel_step)
    elif method == "continuous":
        grid = kernel.grid
        kv = grid.k.reshape(grid.d, -1)
        grad, hess = _continuous_derivatives(kernel, kv, rel_step * grid.dk)
        grad = grad.reshape(grad.shape[:-1] + grid.shape)
        hess = hess.reshape(hess.shape[:-1] + grid.shape)
    else:
        raise ValueError(f"unknown derivative method {method!r}")
    d = kernel.d
    grad = odd_project(grad, d)
    hess = np.real(hermitian_project(hess, d))
    cache[key] = (grad, hess)
    return grad, hess


def taylor_coefficients(kernel: EstimatorKernel, method: str = "lattice", rel_step: float = 0.02):
    """Coefficients of ``Phi_pq(l, w) ~ a0 + a1.w + w^T a2 w / 2``.

    Returns
    -------
    a0 : ndarray (d, d, ...)
    a1 : ndarray (d, d, d, ...)
    a2 : ndarray (d, d, d, d, ...)
    """
    s = kernel.sign
    grad, hess = G_derivatives(kernel, method, rel_step)
    A = kernel.A
    if s == -1.0:
        a0 = np.zeros(kernel.G.shape, dtype=complex)
    else:
        a0 = (1.0 + s) * weight_k_raw(kernel.G, kernel) * A
    a1 = s * weight_k_raw(grad, kernel) * A
    a2 = s * weight_k_raw(hess, kernel) * A
    return a0, a1, a2


def _monomials(d: int, order: int) -> list[tuple[int, ...]]:
    return [b for b in product(range(order + 1), repeat=d) if sum(b) <= order]


def _poly_coeffs(a0, a1, a2, d: int) -> dict:
    """Map monomial exponent -> coefficient array (d, d, ...) of the Taylor polynomial."""
    coeffs: dict = {}

    def add(beta, arr):
        coeffs[beta] = coeffs.get(beta, 0) + arr

    add((0,) * d, a0)
    for i in range(d):
        beta = tuple(int(j == i) for j in range(d))
        add(beta, a1[:, :, i])
    for i in range(d):
        for j in range(d):
            beta = tuple(int(m == i) + int(m == j) for m in range(d))
            add(beta, 0.5 * a2[:, :, i, j])
    return coeffs


def bias_spectrum_fast(kernel: EstimatorKernel, Ctheta: np.ndarray | None = None, *, method: str = "lattice",
                       rel_step: float = 0.02) -> np.ndarray:
    """Second-order Taylor approximation of the bias spectrum, ``O(N log N)``.

    ``method`` and ``rel_step`` select how the derivatives of the second-order
    coefficient are formed (see :func:`G_derivatives`).
    """
    grid = kernel.grid
    d = grid.d
    Ct = kernel.model.Ctheta if Ctheta is None else Ctheta
    if not np.any(Ct):
        return np.zeros(grid.shape)
    a0, a1, a2 = taylor_coefficients(kernel, method, rel_step)
    coeffs = _poly_coeffs(a0, a1, a2, d)
    if kernel.sign == -1.0:
        coeffs.pop((0,) * d, None)
    betas = list(coeffs)
    axes = tuple(range(-d, 0))
    omega = grid.k
    gammas = sorted({tuple(b1[i] + b2[i] for i in range(d)) for b1 in betas for b2 in betas})
    # inverse transforms of moment-weighted and plain C^{theta theta}
    # parity projection keeps the Nyquist rows from breaking l -> -l symmetry
    mono = {}
    for gam in gammas:
        raw = np.prod([omega[i] ** gam[i] for i in range(d)], axis=0)
        mono[gam] = np.real(odd_project(raw, d) if sum(gam) % 2 else hermitian_project(raw, d))
    inv_mom = {g: np.fft.ifftn(mono[g] * Ct, axes=axes) for g in gammas}  # (d, d, ...)
    inv_ct = np.fft.ifftn(Ct, axes=axes)
    scale = grid.size * grid.dk**d / (2.0 * np.pi) ** d
    acc = np.zeros(grid.shape, dtype=complex)
    for b1 in betas:
        c1 = coeffs[b1]
        for b2 in betas:
            c2 = np.conj(coeffs[b2])
            gam = tuple(b1[i] + b2[i] for i in range(d))
            im = inv_mom[gam]
            for p, q, r, s_ in product(range(d), repeat=4):
                pair = c1[p, q] * c2[r, s_]
                if not np.any(pair):
                    continue
                conv = np.fft.fftn(im[p, r] * inv_ct[q, s_] + im[p, s_] * inv_ct[q, r], axes=axes)
                acc += pair * conv
    out = 4.0 * np.real(acc) * scale
    return np.where(kernel.valid, out, 0.0)
