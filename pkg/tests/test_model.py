import math

import numpy as np
import pytest
import scipy.integrate

from specres import model as M
from specres.model import AdmissibilityError, ModelError


class TestKernels:
    def test_line_diagonal_value(self, line_free):
        val = M.free_resolvent_boundary_kernel(line_free, 1.0, "+", 0.3, 0.3)
        assert val == pytest.approx(0.5j)

    def test_line_kernel_is_green_function(self, line_free):
        # (-d^2/dx^2 - lam) applied to a kernel column vanishes off the
        # diagonal and the derivative jump across it is -1
        lam, y = 1.0, 0.4
        k = math.sqrt(lam)
        h = 1e-4
        for x in (-2.0, 1.5, 3.7):
            sten = np.array([-1 / 12, 4 / 3, -5 / 2, 4 / 3, -1 / 12]) / h**2
            xs = x + h * np.arange(-2, 3)
            col = M.free_resolvent_boundary_kernel(line_free, lam, "+", xs, y)
            assert abs(-(sten @ col) - lam * col[2]) < 1e-6
        dplus = (M.free_resolvent_boundary_kernel(line_free, lam, "+", y + h, y)
                 - M.free_resolvent_boundary_kernel(line_free, lam, "+", y, y)) / h
        dminus = (M.free_resolvent_boundary_kernel(line_free, lam, "+", y, y)
                  - M.free_resolvent_boundary_kernel(line_free, lam, "+", y - h, y)) / h
        assert abs((dplus - dminus) - (-1.0)) < 1e-3

    def test_radial_threshold_kernel(self, free_radial):
        assert M.free_resolvent_boundary_kernel(free_radial, 0.0, "+", 0.3, 0.7) \
            == pytest.approx(0.3)

    def test_side_conjugation(self, line_free):
        plus = M.free_resolvent_boundary_kernel(line_free, 2.0, "+", 0.0, 1.0)
        minus = M.free_resolvent_boundary_kernel(line_free, 2.0, "-", 0.0, 1.0)
        assert minus == pytest.approx(np.conj(plus))

    def test_kernel_symmetry(self, free_radial):
        a = M.free_resolvent_boundary_kernel(free_radial, 2.5, "+", 1.1, 2.3)
        b = M.free_resolvent_boundary_kernel(free_radial, 2.5, "+", 2.3, 1.1)
        assert a == b

    def test_line_threshold_refused(self, line_free):
        with pytest.raises(AdmissibilityError):
            M.free_resolvent_boundary_kernel(line_free, 0.0, "+", 0.0, 1.0)
        with pytest.raises(AdmissibilityError):
            M.free_resolvent_boundary_kernel(line_free, -1.0, "+", 0.0, 1.0)

    def test_radial_negative_refused(self, free_radial):
        with pytest.raises(AdmissibilityError):
            M.free_resolvent_boundary_kernel(free_radial, -1.0, "+", 0.3, 0.7)


class TestWeightedResolvent:
    def test_node_doubling_stability(self):
        pot = M.square_well(-2.0, 1.0)
        coarse = M.radial_model(pot, s=1.0, length=14.0)
        fine = M.radial_model(pot, s=1.0, length=14.0, panels=24)
        n_coarse = np.linalg.norm(M.build_weighted_free_resolvent(coarse, lam=4.0, side="+"), 2)
        n_fine = np.linalg.norm(M.build_weighted_free_resolvent(fine, lam=4.0, side="+"), 2)
        assert abs(n_coarse - n_fine) <= 1e-6 * n_fine

    def test_threshold_norm_finite(self, free_radial):
        m = M.build_weighted_free_resolvent(free_radial, lam=0.0, side="+")
        assert np.isfinite(np.linalg.norm(m, 2))

    def test_resolvent_set_hermitian_positive(self, free_radial):
        # Hermitian/positive up to the crease's non-polynomial remainder
        m = M.build_weighted_free_resolvent(free_radial, z=-1.0)
        scale = np.linalg.norm(m, 2)
        assert np.linalg.norm(m - m.conj().T, 2) <= 1e-6 * scale
        evals = np.linalg.eigvalsh((m + m.conj().T) / 2)
        assert evals.min() > -1e-8 * scale

    def test_finite_backend_boundary_refused(self, rng):
        h0 = np.diag([1.0, 2.0, 3.0])
        mod = M.finite_model(h0, np.ones(3), np.zeros((3, 3)))
        with pytest.raises(AdmissibilityError):
            M.build_weighted_free_resolvent(mod, lam=2.0, side="+")
        m = M.build_weighted_free_resolvent(mod, z=-1.0)
        assert np.allclose(np.diag(m), 1.0 / (np.diag(h0) + 1.0))


class TestResolventAction:
    def test_matches_ode(self, small_well):
        g = M.GaussianBump(center=3.0, width=0.5)
        z = 2.0 + 0.3j
        act = M.FreeResolventAction(small_well, M.wavenumber(z))
        samples = g(small_well.grid.nodes)
        h = 1e-3
        sten = np.array([-1 / 12, 4 / 3, -5 / 2, 4 / 3, -1 / 12]) / h**2
        for x in (0.8, 2.2, 5.0):
            vals = act.evaluate(samples, x + h * np.arange(-2, 3))
            resid = -(sten @ vals) - z * vals[2] - g(x)
            assert abs(resid) < 1e-7

    def test_dirichlet_condition(self, free_radial):
        g = M.GaussianBump(center=3.0, width=0.5)
        act = M.FreeResolventAction(free_radial, M.wavenumber(-2.0))
        assert abs(act.evaluate(g(free_radial.grid.nodes), [0.0])[0]) < 1e-14

    def test_norm_identity_machine_precision(self, free_radial):
        g = M.GaussianBump(center=3.0, width=0.5)
        u = g(free_radial.grid.nodes)
        cu = free_radial.c_values * u
        for eps in (1e-1, 1e-2, 1e-3):
            act = M.FreeResolventAction(free_radial, M.wavenumber(4.0 + 1j * eps))
            lhs = act.norm_squared(cu)
            f = act.apply(cu)
            rhs = float((free_radial.grid.weights @ (np.conj(u) * free_radial.c_values * f)).imag) / eps
            assert abs(lhs - rhs) <= 1e-12 * abs(lhs)


class TestFactorization:
    def test_power_weight_cancellation(self):
        pot = M.PotentialSpec(func=lambda x: (1.0 + x**2) ** -1.0 + 0j,
                              support=(0.0, math.inf), sigma=2.0)
        weight = M.MetricWeight("power", s=1.0)
        x = np.linspace(0, 10, 101)
        fact = M.factorize_potential(pot, weight, x)
        assert np.allclose(fact.w_values, 1.0)
        assert not fact.dissipative or np.allclose(fact.w2, 0.0)

    def test_dissipative_indicator(self):
        pot = M.square_well(-2.0j, 1.0)
        weight = M.MetricWeight("power", s=1.0)
        x = np.linspace(0.01, 3, 301)
        fact = M.factorize_potential(pot, weight, x)
        inside = x < 1.0
        assert np.allclose(fact.w_values[inside], -2.0j * (1 + x[inside] ** 2))
        assert fact.dissipative
        assert np.min(fact.w2) >= -1e-12

    def test_unbounded_w_rejected(self):
        pot = M.PotentialSpec(func=lambda x: (1.0 + x**2) ** -0.5 + 0j,
                              support=(0.0, math.inf), sigma=1.0)
        with pytest.raises(ModelError, match="unbounded"):
            M.factorize_potential(pot, M.MetricWeight("power", s=1.0))

    def test_roundtrip(self, small_well):
        x = small_well.grid.nodes
        v = small_well.potential(x)
        recon = small_well.c_values * small_well.w_values * small_well.c_values
        assert np.max(np.abs(recon - v)) <= 1e-12


class TestHypothesisDiagnostics:
    def test_lap_radial_finite(self, free_radial):
        grid = [(lam, "+") for lam in np.linspace(1e-3, 25.0, 24)]
        grid += [4.0 + 1j * eps for eps in (1e-1, 1e-2)]
        sup, _, diverging, _ = M.lap_supremum_estimate(free_radial, grid)
        assert np.isfinite(sup)
        assert not diverging

    def test_lap_line_threshold_divergence(self, line_free):
        grid = [(lam, "+") for lam in np.geomspace(1e-3, 4.0, 24)]
        sup, at, diverging, norms = M.lap_supremum_estimate(line_free, grid)
        assert diverging
        assert at == grid[0]
        # growth ~ lam^(-1/2)
        ratio = norms[0] / norms[4]
        expected = (grid[4][0] / grid[0][0]) ** 0.5
        assert ratio == pytest.approx(expected, rel=0.2)

    def test_lap_independent_of_w(self):
        # same support (hence same grid), different W: C R0 C unchanged
        one = M.radial_model(M.square_well(3.0, 1.0), s=1.5, length=14.0)
        two = M.radial_model(M.square_well(-2.0j, 1.0), s=1.5, length=14.0)
        a = M.build_weighted_free_resolvent(one, lam=4.0, side="+")
        b = M.build_weighted_free_resolvent(two, lam=4.0, side="+")
        assert np.allclose(a, b)

    def test_kato_zero_vector(self, free_radial):
        ratio, _ = M.kato_smoothness_check(free_radial, np.zeros(free_radial.size))
        assert ratio == 0.0

    def test_kato_ratio_bounded(self, free_radial):
        u = M.GaussianBump(center=3.0, width=0.7)(free_radial.grid.nodes)
        ratio, c0 = M.kato_smoothness_check(free_radial, u)
        assert 0 < ratio <= c0**2

    def test_kato_scale_invariant(self, free_radial):
        u = M.GaussianBump(center=3.0, width=0.7)(free_radial.grid.nodes)
        r1, _ = M.kato_smoothness_check(free_radial, u)
        r2, _ = M.kato_smoothness_check(free_radial, 2.0 * u)
        assert r1 == pytest.approx(r2, rel=1e-12)

    def test_kato_matches_time_side(self, free_radial):
        # Plancherel: int ||C e^{-itH0} u||^2 dt has the closed spectral
        # form (2/pi) int |u~(k)|^2 M_c(k, k) dk/k with
        # M_c(k, k) = int c(r)^2 sin^2(kr) dr -- an independent oracle
        from specres.calculus import mode_transform
        from specres.numerics import gauss_legendre

        u = M.GaussianBump(center=3.0, width=0.7)(free_radial.grid.nodes)
        g = free_radial.grid
        ratio, _ = M.kato_smoothness_check(free_radial, u)
        rule = gauss_legendre(240, 1e-6, 8.0)
        tu = mode_transform(free_radial, u, rule.nodes)
        mc = np.array([
            float(g.weights @ (free_radial.c_values**2 * np.sin(k * g.nodes) ** 2))
            for k in rule.nodes
        ])
        oracle = (4.0 / math.pi) * float(
            rule.weights @ (np.abs(tu) ** 2 * mc / rule.nodes))
        norm_u2 = float(g.weights @ np.abs(u) ** 2)
        assert ratio == pytest.approx(oracle / norm_u2, rel=0.02)


class TestConjugation:
    def test_multiplication_passes(self, small_well):
        rep = M.conjugation_check(small_well)
        assert rep["passed"]

    def test_complex_symmetric_finite(self, rng):
        a = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
        w = (a + a.T) / 2
        h0 = rng.standard_normal((4, 4))
        h0 = (h0 + h0.T) / 2
        mod = M.finite_model(h0.astype(complex), np.ones(4), w)
        rep = M.conjugation_check(mod)
        assert rep["jh_equals_hstarj"] <= 1e-12

    def test_generic_finite_fails(self, rng):
        a = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
        h0 = rng.standard_normal((4, 4))
        h0 = (h0 + h0.T) / 2
        mod = M.finite_model(h0.astype(complex), np.ones(4), a)
        rep = M.conjugation_check(mod)
        assert rep["jh_equals_hstarj"] > 1e-6
        assert not rep["passed"]


class TestGrids:
    def test_weights_sum(self, free_radial):
        g = free_radial.grid
        assert g.weights.sum() == pytest.approx(g.hi - g.lo, rel=1e-14)

    def test_breakpoint_alignment(self, small_well):
        assert any(abs(e - 1.0) < 1e-12 for e in small_well.grid.edges)

    def test_max_scan_energy_covers_acceptance_range(self, small_well):
        assert small_well.max_scan_energy() > 25.0

    def test_interpolation_spectral(self, free_radial):
        g = free_radial.grid
        f = M.GaussianBump(center=3.0, width=0.8)
        pts = np.linspace(0.5, 10.0, 77)
        err = np.max(np.abs(g.interpolate(f(g.nodes), pts) - f(pts)))
        assert err < 1e-10
