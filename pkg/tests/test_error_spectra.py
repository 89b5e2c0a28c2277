import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import small_model
from nonstat_quad.error_spectra import (
    G_derivatives,
    bias_map,
    bias_spectrum_exact,
    bias_spectrum_fast,
    crossover_spectrum,
    var_spectrum,
    var_spectrum_direct,
)
from nonstat_quad.errors import CostCapError
from nonstat_quad.estimator import EstimatorKernel, apply_weighting_direct, estimate_fast, nyquist_mask
from nonstat_quad.grid import fft, make_grid, reflect, white_noise_fourier
from nonstat_quad.simulate import simulate_phi, stationary_field, theta_from_phi
from nonstat_quad.spectra import PhaseModel, SpectralMultiplier, constant, matern
from nonstat_quad.transport import build_transport


def _kernel(d=1, n=None, variant="local_invariant", **kw):
    m = small_model(d, n or (64 if d == 1 else 16), **kw)
    return EstimatorKernel(m, variant, nyquist_mask(m.grid, 0.1))


def _expected_estimate(kernel, theta):
    """Exact E[phihat | theta] from the pixel covariance of the modulated field (d=1)."""
    g = kernel.grid
    m = kernel.model
    x = g.x1d
    k = g.k1d
    eta = m.eta_lat[0]
    phase = np.subtract.outer(x, x)[:, :, None] * k + np.subtract.outer(theta, theta)[:, :, None] * eta
    cov = np.real(np.exp(1j * phase) @ m.C_lat) * g.dk / (2 * np.pi)
    Ek = fft(fft(cov, g).T, g).T  # E[Z_a Z_b] in Fourier space
    n = g.n
    idx = np.arange(n)
    X = Ek[(idx[None, :] + idx[:, None]) % n, (-idx[None, :]) % n]  # X[l, k] = E[Z_{k+l} Z_{-k}]
    return apply_weighting_direct(X, kernel)


class TestVariance:
    @pytest.mark.parametrize("d", [1, 2])
    def test_matched_identity(self, d):
        K = _kernel(d)
        C = var_spectrum(K, K.model.CZZobs.copy())
        np.testing.assert_allclose(C, 2 * K.A / (2 * np.pi) ** (d / 2), rtol=1e-10, atol=0)

    @pytest.mark.parametrize("cxx", ["matched", "option1", "option2"])
    @pytest.mark.parametrize("d", [1, 2])
    def test_fft_matches_direct(self, cxx, d):
        K = _kernel(d, eta="transport" if d == 1 else "linear")
        a, b = var_spectrum(K, cxx), var_spectrum_direct(K, cxx)
        np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-12 * b.max())

    def test_nonnegative_and_flagged(self, kernel_1d):
        C = var_spectrum(kernel_1d, "option1")
        assert np.all(C >= 0)
        assert np.all(C[~kernel_1d.valid] == 0)

    @settings(max_examples=15, deadline=None)
    @given(st.floats(1e-3, 1.0), st.floats(1.01, 100.0))
    def test_more_noise_never_lowers_variance(self, noise, factor):
        lo = _kernel(noise=noise)
        hi = _kernel(noise=noise * factor)
        v = lo.valid & hi.valid
        assert np.all(var_spectrum(hi)[v] >= var_spectrum(lo)[v] * (1 - 1e-12))

    def test_crossover_options(self, kernel_1d):
        m = kernel_1d.model
        np.testing.assert_array_equal(crossover_spectrum(kernel_1d, "matched"), m.CZZobs)
        np.testing.assert_array_equal(crossover_spectrum(kernel_1d, "option1"), m.C_lat + m.CNN)
        with pytest.raises(ValueError):
            crossover_spectrum(kernel_1d, "option9")

    def test_stationary_field_variance(self):
        # the estimate of a stationary field with spectrum CZZobs has exactly this variance
        K = _kernel()
        g = K.grid
        W = white_noise_fourier(g, np.random.default_rng(11), size=20000)
        est = estimate_fast(stationary_field(K.model.CZZobs, W, g), K)
        emp = np.mean(np.abs(est) ** 2, axis=0) / g.delta0
        v = K.valid & (np.abs(g.k1d) < 0.5 * np.abs(g.k1d).max())
        np.testing.assert_allclose(emp[v], var_spectrum(K)[v], rtol=0.08)


class TestBiasMap:
    def test_matches_exact_second_order_expectation(self):
        K = _kernel(n=32, noise=0.1)
        g = K.grid
        phi = simulate_phi(K.model.Cphiphi, g, np.random.default_rng(5))
        theta = theta_from_phi(phi, K.model.xi_lat, g)[0]
        eps = 1e-2
        second = (_expected_estimate(K, eps * theta) + _expected_estimate(K, -eps * theta)) / (2 * eps**2)
        got = bias_map(fft(theta, g)[None], K)
        np.testing.assert_allclose(got, second, rtol=1e-3, atol=1e-3 * np.abs(second).max())

    def test_first_order_recovers_phi(self):
        K = _kernel(n=32, noise=0.1)
        g = K.grid
        phi = simulate_phi(K.model.Cphiphi, g, np.random.default_rng(6))
        theta = theta_from_phi(phi, K.model.xi_lat, g)[0]
        eps = 1e-3
        first = (_expected_estimate(K, eps * theta) - _expected_estimate(K, -eps * theta)) / (2 * eps)
        ref = np.where(K.valid, fft(phi, g), 0)
        np.testing.assert_allclose(first, ref, atol=1e-5 * np.abs(ref).max())

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(0.01, 100.0))
    def test_quadratic_in_theta(self, seed, s):
        K = _kernel(n=32)
        th = fft(np.random.default_rng(seed).standard_normal(32), K.grid)[None]
        base = bias_map(th, K)
        np.testing.assert_allclose(bias_map(s * th, K), s**2 * base, rtol=1e-10, atol=1e-14 * s**2)

    def test_cap(self, kernel_1d):
        with pytest.raises(CostCapError):
            bias_map(np.zeros((1, 64)), kernel_1d, cap=32)


def _bias_spectrum_by_polarization(K):
    """Isserlis on the bilinear form recovered from ``bias_map`` by polarization (d=1)."""
    g = K.grid
    n = g.n
    Ct = np.real(K.model.Ctheta[0, 0])
    diag = np.empty((n, n), complex)
    E = np.eye(n, dtype=complex)
    for a in range(n):
        diag[a] = bias_map(E[a][None], K)
    out = np.zeros(n)
    for a in range(n):
        for b in range(a, n):
            l = (a + b) % n
            if a == b:
                q = diag[a][l]
                out[l] += 2 * np.abs(q) ** 2 * Ct[a] * Ct[b]
            else:
                both = bias_map((E[a] + E[b])[None], K)[l]
                q = 0.5 * (both - diag[a][l] - diag[b][l])
                out[l] += 2 * 2 * np.abs(q) ** 2 * Ct[a] * Ct[b]
    return out * g.delta0


class TestBiasSpectrum:
    def test_exact_matches_isserlis_oracle(self):
        K = _kernel(n=32)
        np.testing.assert_allclose(bias_spectrum_exact(K), _bias_spectrum_by_polarization(K), rtol=1e-9,
                                   atol=1e-12 * bias_spectrum_exact(K).max())

    def test_exact_monte_carlo(self):
        K = _kernel(n=32)
        g = K.grid
        rng = np.random.default_rng(3)
        acc = np.zeros(32)
        M = 3000
        for _ in range(M):
            th = fft(theta_from_phi(simulate_phi(K.model.Cphiphi, g, rng), K.model.xi_lat, g), g)
            acc += np.abs(bias_map(th, K)) ** 2
        emp = acc / M / g.delta0
        ref = bias_spectrum_exact(K)
        v = K.valid
        np.testing.assert_allclose(emp[v], ref[v], rtol=0.15)

    def test_nonnegative(self):
        K = _kernel(n=64, eta="transport")
        assert np.all(bias_spectrum_exact(K) >= -1e-14 * bias_spectrum_exact(K).max())

    @settings(max_examples=10, deadline=None)
    @given(st.floats(0.01, 100.0))
    def test_quadratic_in_theta_spectrum(self, s):
        K = _kernel(n=32)
        Ct = K.model.Ctheta
        np.testing.assert_allclose(bias_spectrum_exact(K, s * Ct), s**2 * bias_spectrum_exact(K, Ct), rtol=1e-10)
        np.testing.assert_allclose(bias_spectrum_fast(K, s * Ct), s**2 * bias_spectrum_fast(K, Ct), rtol=1e-10)

    def test_zero_prior(self, kernel_1d):
        Ct = np.zeros_like(kernel_1d.model.Ctheta)
        assert not np.any(bias_spectrum_exact(kernel_1d, Ct))
        assert not np.any(bias_spectrum_fast(kernel_1d, Ct))

    def test_fast_tracks_exact_at_low_frequency(self):
        g = make_grid(1, 10.0, 128)
        C = matern(2.0, 0.05, 1.0, 1)
        eta = build_transport(C, matern(2.1, 0.05, 1.0, 1), 1.5, 1).eta
        m = PhaseModel(g, C, eta, SpectralMultiplier("gradient", 1),
                       matern(5.0, 1.5, 15.0**2 / (2 * np.pi) ** 4, 1), constant(0.0))
        K = EstimatorKernel(m, mask=nyquist_mask(g, 0.1))
        ex, fa = bias_spectrum_exact(K), bias_spectrum_fast(K)
        low = slice(1, 9)
        np.testing.assert_allclose(fa[low], ex[low], rtol=0.1)

    @pytest.mark.parametrize("d", [1, 2])
    def test_fast_is_real_even(self, d):
        K = _kernel(d)
        fa = bias_spectrum_fast(K)
        assert fa.dtype == float
        np.testing.assert_allclose(reflect(fa, d), fa, rtol=1e-10, atol=1e-14 * np.abs(fa).max())

    def test_exact_2d_vs_map_monte_carlo(self):
        K = _kernel(2, n=8)
        g = K.grid
        rng = np.random.default_rng(9)
        acc = np.zeros(g.shape)
        M = 2000
        for _ in range(M):
            th = fft(theta_from_phi(simulate_phi(K.model.Cphiphi, g, rng), K.model.xi_lat, g), g)
            acc += np.abs(bias_map(th, K)) ** 2
        emp = acc / M / g.delta0
        ref = bias_spectrum_exact(K)
        v = K.valid & (ref > 1e-3 * ref.max())
        np.testing.assert_allclose(emp[v], ref[v], rtol=0.2)

    def test_cap(self, kernel_1d):
        with pytest.raises(CostCapError):
            bias_spectrum_exact(kernel_1d, cap=32)


class TestDerivatives:
    @pytest.mark.parametrize("d,n,L", [(1, 256, 40.0), (2, 48, 24.0)])
    def test_lattice_matches_continuous(self, d, n, L):
        # grids that resolve C; the stencils near Nyquist rows use the closed form
        m = small_model(d, n, eta="transport", L=L)
        K = EstimatorKernel(m, mask=nyquist_mask(m.grid, 0.1))
        gl, hl = G_derivatives(K, "lattice")
        gc, hc = G_derivatives(K, "continuous")
        v = K.w > 0
        np.testing.assert_allclose(gl[..., v], gc[..., v], atol=1e-3 * np.abs(gc).max())
        np.testing.assert_allclose(hl[..., v], hc[..., v], atol=1e-3 * np.abs(hc).max())

    def test_fast_spectrum_insensitive_to_method(self):
        K = _kernel(n=128, eta="transport")
        a = bias_spectrum_fast(K)
        b = bias_spectrum_fast(K, method="continuous")
        np.testing.assert_allclose(a, b, rtol=1e-3, atol=1e-6 * b.max())

    def test_unknown_method(self, kernel_1d):
        with pytest.raises(ValueError):
            G_derivatives(kernel_1d, "spectral")
