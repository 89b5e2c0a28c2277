import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nonstat_quad.grid import (
    Field,
    fft,
    hermitian_project,
    ifft,
    make_grid,
    odd_project,
    reflect,
    white_noise_fourier,
)


class TestGridSpec:
    def test_spacings(self):
        g = make_grid(1, 10.0, 100)
        assert g.dx == pytest.approx(0.1)
        assert g.dk == pytest.approx(2 * np.pi / 10)
        assert g.delta0 == pytest.approx(1 / g.dk)

    def test_two_dimensional_shapes(self):
        g = make_grid(2, 2 * np.pi, 16)
        assert g.shape == (16, 16)
        assert g.size == 256
        assert g.k.shape == (2, 16, 16)
        np.testing.assert_allclose(g.kabs[3, 4], np.hypot(3, 4))

    @pytest.mark.parametrize("args", [(3, 1.0, 16), (1, -1.0, 16), (1, 1.0, 15), (1, 1.0, 4)])
    def test_rejects_bad_arguments(self, args):
        with pytest.raises(ValueError):
            make_grid(*args)

    def test_frequency_order(self):
        g = make_grid(1, 2 * np.pi, 8)
        np.testing.assert_array_equal(g.index1d, [0, 1, 2, 3, -4, -3, -2, -1])
        np.testing.assert_allclose(g.k1d, g.index1d.astype(float))


class TestTransforms:
    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.sampled_from([(1, 32), (2, 8)]), st.floats(0.5, 50.0))
    def test_parseval(self, seed, dn, L):
        d, n = dn
        g = make_grid(d, L, n)
        f = np.random.default_rng(seed).standard_normal(g.shape)
        F = fft(f, g)
        lhs = np.sum(f**2) * g.dx**d
        rhs = np.sum(np.abs(F) ** 2) * g.dk**d
        np.testing.assert_allclose(lhs, rhs, rtol=1e-10)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.sampled_from([(1, 32), (2, 8)]))
    def test_roundtrip(self, seed, dn):
        g = make_grid(dn[0], 3.0, dn[1])
        f = np.random.default_rng(seed).standard_normal(g.shape)
        np.testing.assert_allclose(np.real(ifft(fft(f, g), g)), f, atol=1e-12)
        assert np.max(np.abs(np.imag(ifft(fft(f, g), g)))) < 1e-10

    def test_batch_axes(self, rng):
        g = make_grid(1, 1.0, 16)
        f = rng.standard_normal((3, 16))
        np.testing.assert_allclose(fft(f, g)[1], fft(f[1], g))

    def test_shape_mismatch(self):
        g = make_grid(1, 1.0, 16)
        with pytest.raises(ValueError):
            fft(np.zeros(8), g)

    def test_reflect_is_involution(self, rng):
        F = rng.standard_normal((6, 8, 8))
        np.testing.assert_array_equal(reflect(reflect(F, 2), 2), F)

    def test_reflect_maps_k_to_minus_k(self):
        g = make_grid(1, 2 * np.pi, 8)
        np.testing.assert_array_equal(reflect(g.index1d, 1), (-g.index1d + 4) % 8 - 4)

    def test_transform_of_real_field_is_hermitian(self, rng):
        g = make_grid(2, 1.0, 8)
        F = fft(rng.standard_normal(g.shape), g)
        np.testing.assert_allclose(hermitian_project(F, 2), F, atol=1e-14)

    def test_odd_projection_vanishes_on_self_conjugate(self, rng):
        g = make_grid(1, 1.0, 8)
        F = odd_project(rng.standard_normal(8), 1)
        assert F[0] == 0 and F[4] == 0
        np.testing.assert_allclose(reflect(F, 1), -F)


class TestWhiteNoise:
    def test_exact_hermitian_pairing(self, rng):
        g = make_grid(2, 5.0, 16)
        W = white_noise_fourier(g, rng)
        np.testing.assert_array_equal(np.conj(reflect(W, 2)), W)

    def test_variance_matches_frequency_cell(self, rng):
        g = make_grid(1, 7.0, 32)
        W = white_noise_fourier(g, rng, size=4000)
        np.testing.assert_allclose(np.mean(np.abs(W) ** 2, axis=0), g.dk, rtol=0.1)
        np.testing.assert_allclose(np.mean(np.abs(W) ** 2), g.dk, rtol=0.02)

    def test_deterministic(self):
        g = make_grid(1, 1.0, 16)
        a = white_noise_fourier(g, np.random.default_rng(3))
        b = white_noise_fourier(g, np.random.default_rng(3))
        np.testing.assert_array_equal(a, b)


class TestField:
    def test_domain_roundtrip(self, rng):
        g = make_grid(1, 2.0, 16)
        f = Field(rng.standard_normal(16), g)
        back = f.to_fourier().to_pixel()
        assert back.domain == "pixel"
        np.testing.assert_allclose(np.real(back.values), f.values, atol=1e-12)

    def test_rejects_bad_domain(self):
        g = make_grid(1, 2.0, 16)
        with pytest.raises(ValueError):
            Field(np.zeros(16), g, "spectral")
