"""Quadratic estimation of locally invariant nonstationarity in spectral phase random fields."""

from .errors import CostCapError
from .grid import Field, GridSpec, fft, ifft, make_grid, white_noise_fourier
from .spectra import EtaField, PhaseModel, SpectralDensity, SpectralMultiplier, constant, matern, tabulated
from .transport import build_transport, cut_locus_c0, geodesic_density, matern_F, matern_Finv
from .simulate import simulate_phi, simulate_Z, simulate_Z_tilde, stationary_field, theta_from_phi
from .estimator import EstimatorKernel, apply_weighting, estimate_direct, estimate_fast, nyquist_mask
from .error_spectra import bias_spectrum_exact, bias_spectrum_fast, var_spectrum

__version__ = "0.1.0"

__all__ = [
    "CostCapError",
    "Field",
    "GridSpec",
    "fft",
    "ifft",
    "make_grid",
    "white_noise_fourier",
    "EtaField",
    "PhaseModel",
    "SpectralDensity",
    "SpectralMultiplier",
    "constant",
    "matern",
    "tabulated",
    "build_transport",
    "cut_locus_c0",
    "geodesic_density",
    "matern_F",
    "matern_Finv",
    "simulate_phi",
    "simulate_Z",
    "simulate_Z_tilde",
    "stationary_field",
    "theta_from_phi",
    "EstimatorKernel",
    "apply_weighting",
    "estimate_direct",
    "estimate_fast",
    "nyquist_mask",
    "bias_spectrum_exact",
    "bias_spectrum_fast",
    "var_spectrum",
]
