"""Periodic grids, Fourier lattices and continuum-normalized transforms.

Conventions
-----------
A grid of ``n`` points per axis on a periodic box of side ``L`` has pixel
spacing ``dx = L/n`` and frequency spacing ``dk = 2*pi/L``.  The forward
transform approximates

    f_k = int exp(-i x.k) f(x) dx / (2 pi)^{d/2}

by a Riemann sum with weight ``dx**d`` and the inverse uses ``dk**d``.  With
this normalization the Dirac delta at the origin of the frequency lattice has
value ``delta0 = 1/dk**d`` and ``E|Z_k|^2 = delta0 * C_k`` for a stationary
field with spectral density ``C``.

All Fourier arrays use standard FFT (wraparound) ordering.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "GridSpec",
    "Field",
    "make_grid",
    "fft",
    "ifft",
    "reflect",
    "white_noise_fourier",
    "hermitian_project",
    "odd_project",
]


@dataclass(frozen=True)
class GridSpec:
    """Periodic grid geometry and its Fourier lattice.

    Parameters
    ----------
    d : int
        Spatial dimension, 1 or 2.
    L : float
        Side length of the periodic box along every axis.
    n : int
        Number of grid points per axis (even, at least 8).
    """

    d: int
    L: float
    n: int

    def __post_init__(self) -> None:
        if self.d not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {self.d}")
        if not self.L > 0:
            raise ValueError(f"side length must be positive, got {self.L}")
        if int(self.n) != self.n or self.n % 2 or self.n < 8:
            raise ValueError(f"n must be an even integer >= 8, got {self.n}")

    @property
    def dx(self) -> float:
        return self.L / self.n

    @property
    def dk(self) -> float:
        return 2.0 * np.pi / self.L

    @property
    def delta0(self) -> float:
        """Value of the lattice Dirac delta at zero, ``1/dk**d``."""
        return 1.0 / self.dk**self.d

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def size(self) -> int:
        return self.n**self.d

    @cached_property
    def k1d(self) -> np.ndarray:
        """Per-axis frequencies ``2 pi j / L`` in FFT order."""
        return 2.0 * np.pi * np.fft.fftfreq(self.n, d=self.dx)

    @cached_property
    def index1d(self) -> np.ndarray:
        """Per-axis signed integer frequency index in FFT order."""
        return np.fft.fftfreq(self.n, d=1.0 / self.n).round().astype(int)

    @cached_property
    def k(self) -> np.ndarray:
        """Frequency vectors, shape ``(d, *shape)``."""
        return np.stack(np.meshgrid(*([self.k1d] * self.d), indexing="ij"))

    @cached_property
    def kabs(self) -> np.ndarray:
        """Euclidean norm of the frequency vectors, shape ``shape``."""
        return np.sqrt(np.sum(self.k**2, axis=0))

    @cached_property
    def x1d(self) -> np.ndarray:
        """Per-axis pixel positions ``m*dx``; equal mod L to ``[-L/2, L/2)``."""
        return np.arange(self.n) * self.dx

    @cached_property
    def x(self) -> np.ndarray:
        """Pixel positions, shape ``(d, *shape)``."""
        return np.stack(np.meshgrid(*([self.x1d] * self.d), indexing="ij"))

    def to_dict(self) -> dict:
        return {"d": self.d, "L": float(self.L), "n": int(self.n)}


def make_grid(d: int, L: float, n: int) -> GridSpec:
    """Build a :class:`GridSpec`, validating its arguments."""
    return GridSpec(int(d), float(L), int(n))


def _axes(grid: GridSpec) -> tuple[int, ...]:
    return tuple(range(-grid.d, 0))


def fft(f: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Forward transform with weight ``dx**d / (2 pi)**(d/2)``.

    Leading axes beyond the last ``d`` are treated as a batch.
    """
    f = np.asarray(f)
    if f.shape[-grid.d:] != grid.shape:
        raise ValueError(f"array shape {f.shape} does not match grid {grid.shape}")
    scale = grid.dx**grid.d / (2.0 * np.pi) ** (grid.d / 2)
    return np.fft.fftn(f, axes=_axes(grid)) * scale


def ifft(F: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Inverse transform with weight ``dk**d / (2 pi)**(d/2)``; exact inverse of :func:`fft`."""
    F = np.asarray(F)
    if F.shape[-grid.d:] != grid.shape:
        raise ValueError(f"array shape {F.shape} does not match grid {grid.shape}")
    scale = grid.dk**grid.d / (2.0 * np.pi) ** (grid.d / 2) * grid.size
    return np.fft.ifftn(F, axes=_axes(grid)) * scale


def reflect(F: np.ndarray, d: int) -> np.ndarray:
    """Return ``F(-k)`` on the periodic lattice, acting on the last ``d`` axes."""
    axes = tuple(range(-d, 0))
    return np.roll(np.flip(F, axis=axes), 1, axis=axes)


def hermitian_project(F: np.ndarray, d: int) -> np.ndarray:
    """Hermitian part ``(F_k + conj(F_{-k}))/2``."""
    return 0.5 * (F + np.conj(reflect(F, d)))


def odd_project(F: np.ndarray, d: int) -> np.ndarray:
    """Odd part ``(F_k - F_{-k})/2``; vanishes on self-conjugate frequencies."""
    return 0.5 * (F - reflect(F, d))


def white_noise_fourier(grid: GridSpec, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Hermitian complex Gaussian white noise with ``E|W_k|^2 = dk**d``.

    Drawn as the DFT of real iid normals, so self-conjugate frequencies are
    real with the same variance and ``W_{-k} = conj(W_k)`` holds exactly.

    Parameters
    ----------
    grid : GridSpec
    rng : numpy.random.Generator
    size : int, optional
        Number of independent draws stacked along a leading axis.
    """
    shape = grid.shape if size is None else (size, *grid.shape)
    w = rng.standard_normal(shape)
    W = np.fft.fftn(w, axes=_axes(grid)) * np.sqrt(grid.dk**grid.d / grid.size)
    # remove floating point asymmetry from the FFT so the pairing is exact
    return hermitian_project(W, grid.d)


@dataclass(frozen=True)
class Field:
    """Array on a grid tagged with its domain (``"pixel"`` or ``"fourier"``)."""

    values: np.ndarray
    grid: GridSpec
    domain: str = "pixel"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if self.domain not in ("pixel", "fourier"):
            raise ValueError(f"unknown domain {self.domain!r}")
        if np.shape(self.values)[-self.grid.d:] != self.grid.shape:
            raise ValueError("values do not match grid shape")

    def to_fourier(self) -> "Field":
        if self.domain == "fourier":
            return self
        return Field(fft(self.values, self.grid), self.grid, "fourier")

    def to_pixel(self) -> "Field":
        if self.domain == "pixel":
            return self
        return Field(ifft(self.values, self.grid), self.grid, "pixel")
