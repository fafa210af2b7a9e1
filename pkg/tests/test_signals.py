"""Weighted signals: norms, transforms, antiderivative, truncation, convolution."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memax import (
    NonCausalKernel,
    NonPositiveWeight,
    SampledKernel,
    TimeGrid,
    WeightedSignal,
    WraparoundExceeded,
    antiderivative,
    causal_convolve,
    delta_kernel,
    dl_time_kernel,
    eval_chi_dl,
    fourier_laplace,
    inverse_fourier_laplace,
    plain_laplace,
    smooth_pulse,
    spectral_derivative,
    truncate_after,
    weighted_norm,
)
from memax import DrudeLorentzParams
from memax.signals import read_signal, write_signal


def make_signal(rng, n=512, dt=0.01, t_start=-1.0, rho=0.7, dim=3, center=1.5, width=0.3):
    g = TimeGrid(t_start, dt, n)
    prof = np.exp(-(((g.times - center) / width) ** 2))
    vals = prof[:, None] * rng.standard_normal((n, dim))
    return WeightedSignal(g, rho, vals)


class TestWeightedNorm:
    def test_zero_signal(self):
        g = TimeGrid(0.0, 0.1, 16)
        u = WeightedSignal(g, 1.0, np.zeros((16, 2)))
        assert weighted_norm(u) == 0.0

    def test_indicator_closed_form(self):
        # integral_0^1 e^{-2t} dt = (1 - e^{-2})/2, evaluated by hand
        g = TimeGrid(-2.0, 1e-3, 6000)
        vals = ((g.times >= 0) & (g.times <= 1.0)).astype(float)
        u = WeightedSignal(g, 1.0, vals)
        exact = np.sqrt((1.0 - np.exp(-2.0)) / 2.0)
        # trapezoid at the jump costs O(dt); tolerance sized accordingly
        assert abs(weighted_norm(u) - exact) < 2e-3 * exact
        assert abs(weighted_norm(u) - exact) > 0  # quadrature, not magic

    def test_matches_dense_summation_oracle(self, rng):
        u = make_signal(rng)
        # independent direct-sum oracle, coded from the definition
        w = np.exp(-2.0 * u.rho * u.times)
        sq = (np.abs(u.values) ** 2).sum(axis=1) * w
        direct = np.sqrt(np.trapezoid(sq, dx=u.grid.dt))
        assert abs(weighted_norm(u) - direct) <= 1e-12 * max(direct, 1.0)

    def test_mixing_weights_raises(self, rng):
        u = make_signal(rng, rho=0.5)
        v = make_signal(rng, rho=0.7)
        with pytest.raises(ValueError, match="different weights"):
            _ = u + v


class TestFourierLaplace:
    def test_delta_flat_spectrum(self):
        g = TimeGrid(-0.5, 0.01, 256)
        vals = np.zeros(256)
        vals[g.index_of(0.0)] = 1.0 / g.dt
        u = WeightedSignal(g, 0.0, vals, wrap_tol=1.0)
        U = fourier_laplace(u, check=False)
        mags = np.abs(U.values[:, 0])
        assert mags.std() / mags.mean() < 1e-12

    def test_dl_kernel_matches_closed_form(self):
        # plain Laplace of the damped-sine kernel equals the rational law
        p = DrudeLorentzParams(1.0, [(1.0, 1.0, 2.0)])
        g = TimeGrid(0.0, 1e-3, 2 ** 15)  # gamma*T = 32
        kern = dl_time_kernel(p, g)
        u = WeightedSignal(g, 2.0, kern.values)
        U = fourier_laplace(u, check=False)
        lhs = np.sqrt(2.0 * np.pi) * U.values[:, 0]
        rhs = eval_chi_dl(U.z, p)
        band = np.abs(U.xi) < 50.0
        assert np.abs(lhs[band] - rhs[band]).max() < 1e-6
        # off-band the aliasing floor stays small in absolute terms
        assert np.abs(lhs - rhs).max() < 1e-5

    def test_plancherel(self, rng):
        u = make_signal(rng)
        U = fourier_laplace(u)
        n2 = weighted_norm(u) ** 2
        assert abs(U.plancherel_mass() - n2) <= 1e-10 * n2

    def test_wraparound_gate(self, rng):
        g = TimeGrid(0.0, 0.01, 128)
        vals = np.ones((128, 1))
        u = WeightedSignal(g, 0.0, vals)
        with pytest.raises(WraparoundExceeded):
            fourier_laplace(u)


class TestInverse:
    def test_round_trip_both_ways(self, rng):
        u = make_signal(rng)
        U = fourier_laplace(u)
        back = inverse_fourier_laplace(U)
        assert np.abs(back.values - u.values).max() < 1e-12 * np.abs(u.values).max()
        again = fourier_laplace(back)
        assert np.abs(again.values - U.values).max() < 1e-12 * np.abs(U.values).max()

    def test_linearity(self, rng):
        u = make_signal(rng)
        v = make_signal(rng)
        a, b = 1.7, -0.3 + 0.2j
        lhs = fourier_laplace(u * a + v * b, check=False)
        rhs = fourier_laplace(u, check=False).values * a + fourier_laplace(v, check=False).values * b
        assert np.abs(lhs.values - rhs).max() < 1e-12 * np.abs(rhs).max()


class TestAntiderivative:
    def test_indicator_gives_ramp(self):
        g = TimeGrid(-1.0, 1e-3, 4000)
        vals = ((g.times >= 0) & (g.times <= 1.0)).astype(float)
        u = WeightedSignal(g, 1.0, vals)
        ramp = antiderivative(u)
        expect = np.clip(g.times, 0.0, 1.0)
        assert np.abs(ramp.values[:, 0] - expect).max() < 2e-3

    def test_norm_bound_one_over_rho(self, rng):
        # |d/dt^{-1}| <= 1/rho within 2% across a batch
        rho = 1.3
        worst = 0.0
        for _ in range(100):
            u = make_signal(rng, n=1024, dt=0.02, t_start=-2.0, rho=rho,
                            dim=1, center=rng.uniform(0.5, 3.0), width=rng.uniform(0.2, 1.0))
            r = weighted_norm(antiderivative(u)) / weighted_norm(u)
            worst = max(worst, r)
        assert worst <= (1.0 / rho) * 1.02

    def test_differentiate_then_integrate(self, rng):
        g = TimeGrid(-1.0, 0.005, 2048)
        prof = smooth_pulse(g.times, 0.0, 2.0)
        u = WeightedSignal(g, 1.0, prof[:, None])
        du = np.gradient(u.values[:, 0], g.dt)  # finite-difference oracle
        v = antiderivative(u.with_values(du[:, None]))
        err = np.abs(v.values[:, 0] - u.values[:, 0]).max()
        assert err < 5.0 * g.dt ** 2 / g.dt  # O(dt^2) per step, O(dt) accumulated at edges
        # refine: halving dt must shrink the error
        g2 = TimeGrid(-1.0, 0.0025, 4096)
        prof2 = smooth_pulse(g2.times, 0.0, 2.0)
        u2 = WeightedSignal(g2, 1.0, prof2[:, None])
        du2 = np.gradient(u2.values[:, 0], g2.dt)
        v2 = antiderivative(u2.with_values(du2[:, None]))
        err2 = np.abs(v2.values[:, 0] - u2.values[:, 0]).max()
        assert err2 < 0.6 * err

    def test_nonpositive_weight_rejected(self, rng):
        u = make_signal(rng, rho=-0.5)
        with pytest.raises(NonPositiveWeight):
            antiderivative(u)


class TestTruncate:
    def test_below_window_is_identity(self, rng):
        u = make_signal(rng)
        v = truncate_after(u, u.grid.t_start - 1.0)
        assert np.array_equal(v.values, u.values)

    def test_above_window_zeroes(self, rng):
        u = make_signal(rng)
        v = truncate_after(u, u.grid.t_end + 1.0)
        assert not v.values.any()

    @settings(max_examples=25, deadline=None)
    @given(a=st.floats(-1.0, 4.0), b=st.floats(-1.0, 4.0))
    def test_composition_is_max(self, a, b):
        rng = np.random.default_rng(7)
        u = make_signal(rng)
        lhs = truncate_after(truncate_after(u, a), b)
        rhs = truncate_after(u, max(a, b))
        assert np.array_equal(lhs.values, rhs.values)

    def test_projection_idempotent_exactly(self, rng):
        u = make_signal(rng)
        once = truncate_after(u, 1.0)
        twice = truncate_after(once, 1.0)
        assert np.array_equal(once.values, twice.values)


class TestCausalConvolve:
    def test_delta_identity(self, rng):
        u = make_signal(rng)
        out = causal_convolve(delta_kernel(u.grid.dt), u)
        assert np.abs(out.values - u.values).max() < 1e-14 * np.abs(u.values).max()

    def test_indicator_matches_antiderivative(self, rng):
        g = TimeGrid(-1.0, 0.01, 512)
        prof = smooth_pulse(g.times, 0.0, 2.0)
        u = WeightedSignal(g, 1.0, prof[:, None] * rng.standard_normal((1,))[None, :])
        kern = SampledKernel(TimeGrid(0.0, g.dt, g.n_samples), np.ones(g.n_samples))
        conv = causal_convolve(kern, u)
        ad = antiderivative(u)
        scale = np.abs(ad.values).max()
        assert np.abs(conv.values - ad.values).max() < 1e-12 * scale

    def test_exact_causality(self, rng):
        g = TimeGrid(0.0, 0.05, 256)
        vals = (g.times > 4.0).astype(float) * np.sin(g.times)
        u = WeightedSignal(g, 1.0, vals)
        kern = SampledKernel(TimeGrid(0.0, 0.05, 64), np.exp(-g.times[:64]))
        out = causal_convolve(kern, u)
        assert np.all(out.values[g.times <= 4.0] == 0.0)

    def test_spectral_identity(self, rng):
        # L(kappa * u) = sqrt(2 pi) L(kappa) L(u) to quadrature tolerance
        g = TimeGrid(-4.0, 0.005, 4096)
        prof = smooth_pulse(g.times, 0.0, 2.0)
        u = WeightedSignal(g, 1.5, prof[:, None] * rng.standard_normal((2,))[None, :])
        lag = TimeGrid(0.0, g.dt, 2048)
        kern = SampledKernel(lag, np.exp(-2.0 * lag.times) * np.sin(3.0 * lag.times))
        conv = causal_convolve(kern, u)
        C = fourier_laplace(conv, check=False)
        U = fourier_laplace(u, check=False)
        K = plain_laplace(kern, U.z)
        err = np.abs(C.values - K[:, None] * U.values).max()
        assert err < 5e-5 * np.abs(C.values).max()

    def test_noncausal_kernel_rejected(self):
        lag = TimeGrid(-0.5, 0.01, 128)
        kern = SampledKernel(lag, np.ones(128))
        with pytest.raises(NonCausalKernel):
            kern.check_causal()


class TestSpectralDerivative:
    def test_matches_finite_differences(self, rng):
        g = TimeGrid(-2.0, 0.005, 2048)
        prof = smooth_pulse(g.times, 0.0, 2.0)
        u = WeightedSignal(g, 1.0, prof[:, None])
        du = spectral_derivative(u)
        fd = np.gradient(u.values[:, 0].real, g.dt)
        interior = slice(10, -10)
        err = np.abs(du.values[interior, 0].real - fd[interior]).max()
        assert err < 1e-3


class TestContainer:
    def test_round_trip_float32_payload(self, rng, tmp_path):
        u = make_signal(rng, n=64, dim=2)
        path = str(tmp_path / "sig.bin")
        write_signal(u, path)
        v = read_signal(path)
        assert v.grid == u.grid
        assert v.rho == u.rho
        # payload is complex64 by format, so round trip at single precision
        assert np.abs(v.values - u.values).max() < 1e-6 * np.abs(u.values).max()

    def test_csv_writer(self, rng, tmp_path):
        from memax.signals import write_signal_csv

        u = make_signal(rng, n=16, dim=1)
        path = str(tmp_path / "sig.csv")
        write_signal_csv(u, path)
        text = open(path).read()
        assert "re_0" in text and str(u.rho) in text
