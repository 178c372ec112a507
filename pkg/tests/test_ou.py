import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from obslab.errors import AliasingError, DomainError, UsageError
from obslab.evolution import propagate
from obslab.observability import observability_candidates
from obslab.ou import (MatrixTrack, OUSystem, apply_gaussian_shear, fit_ou_l2_dissipation, gram_matrix,
                       kalman_generalized, kolmogorov_form, l2_high_frequency_norm, lemma_bound, liouville_check,
                       norm_bound_check, ou_dissipation_constants, ou_norm_bound, ou_propagate, quad_form,
                       quad_form_matrix, sheared_spectrum, solve_transition)
from obslab.spectral import Field, GridSpec, lp_norm
from obslab.symbol import NonAutonomousSymbol

KOL = OUSystem.kolmogorov(1, 1.0)


def constant_system(A, B, T=1.0):
    return OUSystem(MatrixTrack.constant(A), MatrixTrack.constant(B), T)


def gaussian_2d(grid, sigma=1.0):
    return Field(grid, np.exp(-(grid.x[0] ** 2 + grid.x[1] ** 2) / (2 * sigma ** 2)))


class TestTracks:
    def test_trig_derivatives(self):
        tr = MatrixTrack.trig([[1.0]], [[2.0]], [[3.0]], 2.0)
        t = 0.3
        assert tr.value(t)[0, 0] == pytest.approx(1 + 2 * math.cos(0.6) + 3 * math.sin(0.6))
        assert tr.derivative(t, 1)[0, 0] == pytest.approx(-4 * math.sin(0.6) + 6 * math.cos(0.6))
        assert tr.derivative(t, 2)[0, 0] == pytest.approx(-8 * math.cos(0.6) - 12 * math.sin(0.6))

    def test_polynomial(self):
        tr = MatrixTrack.polynomial([[[1.0]], [[0.0]], [[3.0]]])
        assert tr.value(2.0)[0, 0] == 13.0
        assert tr.derivative(2.0, 1)[0, 0] == 12.0
        assert tr.derivative(2.0, 3)[0, 0] == 0.0
        assert tr.trace_integral(0.0, 1.0) == pytest.approx(2.0)

    def test_callable_matches_trig(self):
        exact = MatrixTrack.trig([[0.5]], [[1.0]], [[0.0]], 3.0)
        approx = MatrixTrack.from_callable(lambda t: [[0.5 + math.cos(3 * t)]], 1)
        for n in range(3):
            assert approx.derivative(0.2, n) == pytest.approx(exact.derivative(0.2, n), rel=1e-5, abs=1e-6)
        assert approx.trace_integral(0.0, 1.0) == pytest.approx(exact.trace_integral(0.0, 1.0), rel=1e-12)

    def test_flags(self):
        assert MatrixTrack.constant(np.zeros((2, 2))).is_zero()
        assert MatrixTrack.trig([[1.0]], [[0.0]], [[0.0]], 1.0).is_constant
        assert not MatrixTrack.polynomial([[[1.0]], [[1.0]]]).is_constant

    def test_non_square(self):
        with pytest.raises(UsageError):
            MatrixTrack.constant(np.zeros((2, 3)))
        with pytest.raises(UsageError):
            OUSystem(MatrixTrack.constant(np.eye(2)), MatrixTrack.constant(np.eye(3)), 1.0)


class TestTransition:
    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2 ** 31), d=st.integers(1, 4), tau=st.floats(0.05, 1.0))
    def test_matches_expm_and_liouville(self, seed, d, tau):
        B = np.random.default_rng(seed).standard_normal((d, d))
        sys = constant_system(np.eye(d), B)
        R = solve_transition(sys, 0.0, tau)
        assert np.max(np.abs(R - scipy.linalg.expm(tau * B))) < 1e-10
        assert liouville_check(sys, 0.0, tau) < 1e-9

    def test_nilpotent(self):
        R = solve_transition(KOL, 0.2, 0.9)
        assert np.allclose(R, [[1.0, 0.7], [0.0, 1.0]], atol=1e-13)

    def test_backward(self):
        sys = constant_system(np.eye(2), [[0.0, 1.0], [-1.0, 0.0]])
        R = solve_transition(sys, 0.8, 0.1) @ solve_transition(sys, 0.1, 0.8)
        assert np.allclose(R, np.eye(2), atol=1e-11)

    def test_time_dependent_cocycle(self):
        sys = OUSystem(MatrixTrack.constant(np.eye(2)),
                       MatrixTrack.trig([[0.0, 1.0], [0.0, 0.0]], [[0.3, 0.0], [0.0, -0.2]],
                                        [[0.0, 0.0], [0.5, 0.0]], 4.0), 1.0)
        lhs = solve_transition(sys, 0.4, 0.9) @ solve_transition(sys, 0.1, 0.4)
        assert np.max(np.abs(lhs - solve_transition(sys, 0.1, 0.9))) < 1e-10
        assert liouville_check(sys, 0.1, 0.9) < 1e-9

    def test_domain(self):
        with pytest.raises(DomainError):
            solve_transition(KOL, 0.0, 2.0)


class TestGram:
    def test_against_quadrature(self):
        rng = np.random.default_rng(7)
        A, B = rng.standard_normal((3, 3)), rng.standard_normal((3, 3))
        sys = constant_system(A, B)
        s, t = 0.2, 0.8

        def integrand(r):
            Rsr = scipy.linalg.expm(B * (s - r))
            return Rsr @ A @ A.T @ Rsr.T

        ref, _ = integrate.quad_vec(integrand, s, t, epsabs=1e-13, epsrel=1e-12)
        assert np.max(np.abs(gram_matrix(sys, s, t) - ref)) < 1e-10

    @settings(max_examples=50, deadline=None)
    @given(s=st.floats(0, 0.5), tau=st.floats(0.01, 0.5), xi=st.floats(-5, 5), eta=st.floats(-5, 5))
    def test_kolmogorov_closed_form(self, s, tau, xi, eta):
        q = quad_form(KOL, s, s + tau, [xi, eta])
        ref = kolmogorov_form(tau, np.array([xi]), np.array([eta]))
        assert abs(q - ref) <= 1e-10 * max(1.0, abs(ref))

    @settings(max_examples=30, deadline=None)
    @given(tau=st.floats(0.01, 1.0))
    def test_kolmogorov_min_eigenvalue(self, tau):
        ev = np.linalg.eigvalsh(quad_form_matrix(KOL, 0.0, tau))
        assert ev[0] >= (4 - math.sqrt(13)) / 3 * tau ** 3 * (1 - 1e-9)

    def test_reverse_order_rejected(self):
        with pytest.raises(UsageError):
            gram_matrix(KOL, 0.5, 0.2)


class TestKalman:
    def test_kolmogorov(self):
        res = kalman_generalized(KOL)
        assert res.satisfied and res.rank == 2 and res.k_used == 1

    def test_zero_diffusion_fails(self):
        res = kalman_generalized(constant_system(np.zeros((2, 2)), [[0.0, 1.0], [0.0, 0.0]]))
        assert res.status == "fails" and res.rank == 0

    def test_identity_diffusion(self):
        res = kalman_generalized(constant_system(np.eye(3), np.zeros((3, 3))))
        assert res.satisfied and res.rank == 3 and res.k_used == 0

    def test_time_dependent_diffusion(self):
        # A(t) = (1 - t) e_2 e_2^T vanishes only at t = 1; Kalman at T = 1 reads A(0)
        A = MatrixTrack.polynomial([[[0.0, 0.0], [0.0, 1.0]], [[0.0, 0.0], [0.0, -1.0]]])
        sys = OUSystem(A, MatrixTrack.constant([[0.0, 1.0], [0.0, 0.0]]), 1.0)
        res = kalman_generalized(sys)
        assert res.satisfied and res.k_used == 1

    def test_autonomous_rank_deficient_fails(self):
        res = kalman_generalized(constant_system([[1.0, 0.0], [0.0, 0.0]], np.zeros((2, 2))))
        assert res.status == "fails" and res.rank == 1

    def test_bad_time(self):
        with pytest.raises(DomainError):
            kalman_generalized(KOL, T=2.0)


class TestShear:
    @pytest.mark.parametrize("M", [
        [[1.0, 0.0], [0.5, 1.0]],
        [[1.0, -0.4], [0.0, 0.8]],
        [[0.9, 0.3], [-0.2, 1.1]],
        [[0.0, 1.0], [1.0, 0.0]],
    ])
    def test_gaussian_closed_form(self, M):
        g = GridSpec(2, 12.0, 64)
        res = sheared_spectrum(gaussian_2d(g), M)
        xi = np.stack(g.xi, axis=-1) @ np.asarray(M).T
        ref = 2 * np.pi * np.exp(-0.5 * np.sum(xi ** 2, -1))
        assert np.max(np.abs(res.values - ref)) < 1e-10
        assert res.spill < 1e-10

    def test_methods_agree(self):
        # resolved grid: the spectrum tail beyond Nyquist is far below the tolerance
        g = GridSpec(2, 12.0, 64)
        f = gaussian_2d(g, 1.3)
        M = [[0.9, 0.3], [-0.2, 1.1]]
        a = sheared_spectrum(f, M).values
        b = sheared_spectrum(f, M, method="direct").values
        assert np.max(np.abs(a - b)) < 1e-10
        c = sheared_spectrum(f, M, method="interp").values
        assert np.max(np.abs(a - c)) < 1e-3

    def test_bad_input(self):
        g = GridSpec(2, 8.0, 16)
        with pytest.raises(UsageError):
            sheared_spectrum(gaussian_2d(g), [[1.0, 1.0], [1.0, 1.0]])
        with pytest.raises(UsageError):
            sheared_spectrum(gaussian_2d(g), np.eye(2), method="magic")

    def test_aliasing_detected(self):
        g = GridSpec(2, 8.0, 32)
        noise = Field(g, np.random.default_rng(0).standard_normal(g.shape))
        with pytest.raises(AliasingError) as info:
            apply_gaussian_shear(noise, np.zeros((2, 2)), [[1.0, 0.0], [3.0, 1.0]])
        assert info.value.spill > 1e-8


class TestPropagate:
    def test_heat_agreement(self):
        # A = sqrt2 Id, B = 0 gives the heat semigroup
        g1 = GridSpec(1, 16.0, 256)
        sys = constant_system([[math.sqrt(2)]], [[0.0]])
        heat = NonAutonomousSymbol.from_xi_coefficients(1, 2, 1.0, {(2,): 1.0})
        f = Field(g1, np.exp(-g1.x[0] ** 2 / 2) * np.cos(g1.x[0]))
        a = ou_propagate(sys, 0.1, 0.6, f).values
        b = propagate(heat, 0.1, 0.6, f).values
        assert np.max(np.abs(a - b)) < 1e-9

    def test_kolmogorov_fourier_shear_identity(self):
        g = GridSpec(2, 10.0, 64)
        f = gaussian_2d(g)
        u = ou_propagate(KOL, 0.0, 0.3, f)
        # F u(xi, eta) = exp(-q/2) F f(xi, eta + tau xi) with F f = 2 pi exp(-|.|^2/2)
        from obslab.spectral import forward_transform
        xi, eta = g.xi
        tau = 0.3
        ref = 2 * np.pi * np.exp(-0.5 * (xi ** 2 + (eta + tau * xi) ** 2)
                                 - 0.5 * kolmogorov_form(tau, xi[..., None], eta[..., None]))
        assert np.max(np.abs(forward_transform(u).values - ref)) < 1e-10

    def test_cocycle(self):
        g = GridSpec(2, 10.0, 64)
        f, _ = observability_candidates(g, 3, kinds=("packet",), band=2.0, sigma_range=(1.0, 1.3),
                                        center_fraction=0.1)
        two = ou_propagate(KOL, 0.2, 0.5, ou_propagate(KOL, 0.0, 0.2, f)).values
        one = ou_propagate(KOL, 0.0, 0.5, f).values
        assert np.max(np.abs(two - one)) < 1e-8

    def test_identity_and_window(self):
        g = GridSpec(2, 10.0, 16)
        f = gaussian_2d(g)
        assert np.array_equal(ou_propagate(KOL, 0.3, 0.3, f).values, f.values)
        with pytest.raises(UsageError):
            ou_propagate(OUSystem.kolmogorov(1, 1.0, eps_window=0.5), 0.0, 0.8, f)
        with pytest.raises(UsageError):
            ou_propagate(KOL, 0.0, 0.5, Field(GridSpec(1, 10.0, 16), np.zeros(16)))

    def test_degenerate_form_rejected(self):
        g = GridSpec(2, 8.0, 16)
        sys = constant_system([[1.0, 0.0], [0.0, 0.0]], np.zeros((2, 2)))
        with pytest.raises(UsageError):
            ou_propagate(sys, 0.0, 0.5, gaussian_2d(g))


class TestNormBounds:
    @pytest.mark.parametrize("p,expected", [(1.0, 1.0), (2.0, 0.5 ** 0.5), (math.inf, 0.5)])
    def test_lemma_bound(self, p, expected):
        assert lemma_bound([[2.0, 0.0], [0.0, 1.0]], p) == pytest.approx(expected)

    @pytest.mark.parametrize("p", [1.0, 1.25, 2.0, 4.0, math.inf])
    def test_kolmogorov_sweep(self, p):
        g = GridSpec(2, 10.0, 64)
        f, _ = observability_candidates(g, 6, kinds=("packet",), band=2.0, sigma_range=(1.0, 1.3),
                                        center_fraction=0.1)
        rep = norm_bound_check(KOL, 0.0, 0.5, p, f)
        assert rep.bound == 1.0 and rep.passed

    def test_damped_drift_bound(self):
        # bound exp((1/2 - 1/p') int tr B) with int tr B = -0.4
        g = GridSpec(2, 10.0, 64)
        sys = constant_system(np.eye(2), -np.eye(2) * 0.5)
        f, _ = observability_candidates(g, 4, kinds=("packet",), band=2.0, sigma_range=(1.0, 1.3),
                                        center_fraction=0.1)
        for p in (1.0, 2.0, 3.0):
            rep = norm_bound_check(sys, 0.0, 0.4, p, f)
            assert rep.passed
        assert ou_norm_bound(sys, 0.0, 0.4, 1.0) == pytest.approx(math.exp(-0.2))
        assert ou_norm_bound(sys, 0.0, 0.4, math.inf) == pytest.approx(math.exp(0.2))

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 2 ** 31), p=st.sampled_from([1.0, 1.5, 2.0, 3.0, math.inf]))
    def test_gaussian_shear_bound(self, seed, p):
        rng = np.random.default_rng(seed)
        # Lam near the identity keeps the sheared packets resolved in space and frequency
        g = GridSpec(2, 14.0, 128)
        Lam = np.diag(rng.uniform(0.8, 1.25, 2)) + 0.05 * rng.uniform(-1, 1, (2, 2)) * (1 - np.eye(2))
        C = rng.standard_normal((2, 2))
        f, _ = observability_candidates(g, 3, seed=seed % 1000, kinds=("packet",), band=2.0,
                                        sigma_range=(1.0, 1.3), center_fraction=0.1)
        out = apply_gaussian_shear(f, 0.1 * C @ C.T, Lam)
        ratio = lp_norm(out, p) / lp_norm(f, p)
        assert np.all(ratio <= lemma_bound(Lam, p) * (1 + 1e-10))


class TestDissipation:
    def test_kolmogorov_fit(self):
        sys = OUSystem.kolmogorov(1, 0.5)
        fit = fit_ou_l2_dissipation(sys, np.geomspace(5, 50, 6), np.geomspace(0.05, 0.5, 5))
        assert fit.c0 == pytest.approx(1.0)
        assert fit.c1 == pytest.approx(1 / 96, rel=1e-6)
        assert fit.m1 == pytest.approx(3.0, rel=1e-6)

    def test_l2_norm_monotone(self):
        sys = OUSystem.kolmogorov(1, 0.5)
        vals = [l2_high_frequency_norm(sys, 0.0, 0.3, lam) for lam in (5, 10, 20, 40)]
        assert all(b < a for a, b in zip(vals, vals[1:]))

    def test_constants(self):
        sys = OUSystem.kolmogorov(1, 0.5)
        fit = fit_ou_l2_dissipation(sys, np.geomspace(5, 50, 6), np.geomspace(0.05, 0.5, 5))
        lo = ou_dissipation_constants(sys, fit, 2.0 - 1e-9, 20.0, 0.0, 0.3)
        hi = ou_dissipation_constants(sys, fit, 2.0 + 1e-9, 20.0, 0.0, 0.3)
        assert lo == pytest.approx(hi, rel=1e-6)
        seq = [ou_dissipation_constants(sys, fit, 3.0, lam, 0.0, 0.3) for lam in (10, 20, 40)]
        assert all(b < a for a, b in zip(seq, seq[1:]))
        with pytest.raises(UsageError):
            ou_dissipation_constants(sys, None, 2.0, 20.0, 0.0, 0.3)
        with pytest.raises(UsageError):
            ou_dissipation_constants(sys, fit, 1.0, 20.0, 0.0, 0.3)
