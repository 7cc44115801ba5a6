import cmath
import math

import numpy as np
import pytest
import scipy.integrate

from specres import birman_schwinger as BS
from specres import families as F
from specres import model as M
from specres.model import AdmissibilityError, ModelError
from specres.numerics import LimitSequence, extrapolate_to_zero


class TestBoundaryOperator:
    def test_free_model_trivial(self, free_radial):
        op = BS.bs_operator(free_radial, 1.0, "+")
        assert op.norm <= 1e-14
        assert op.sigma_min == pytest.approx(1.0)

    def test_entries_match_direct_quadrature(self, small_well):
        # independent oracle: adaptive quadrature of c G c W against the
        # panel interpolant of a test vector, split at the kernel crease
        lam = 1.0
        k = math.sqrt(lam)
        g = small_well.grid
        op = BS.bs_operator(small_well, lam, "+")
        rng = np.random.default_rng(0)
        f = np.exp(-0.5 * ((g.nodes - 0.7) / 0.4) ** 2) * (1 + 0.3j)
        kf = (op.k_matrix @ (g.sqrtw * f)) / g.sqrtw

        def integrand_re(y, x):
            gval = M._kernel_value("radial", k, x, y)
            val = (small_well.weight(x) * gval * small_well.weight(y)
                   * small_well.potential(np.array([y]))[0]
                   / small_well.weight(y) ** 2)
            return (val * g.interpolate(f, [y])[0]).real

        def integrand_im(y, x):
            gval = M._kernel_value("radial", k, x, y)
            val = (small_well.weight(x) * gval * small_well.weight(y)
                   * small_well.potential(np.array([y]))[0]
                   / small_well.weight(y) ** 2)
            return (val * g.interpolate(f, [y])[0]).imag

        for i in rng.choice(g.size, 3, replace=False):
            x = g.nodes[i]
            pieces = sorted({0.0, min(x, 1.0), 1.0} | ({x} if x < 1.0 else set()))
            total = 0.0
            for a, b in zip(pieces[:-1], pieces[1:]):
                re, _ = scipy.integrate.quad(integrand_re, a, b, args=(x,), limit=100)
                im, _ = scipy.integrate.quad(integrand_im, a, b, args=(x,), limit=100)
                total += re + 1j * im
            assert kf[i] == pytest.approx(total, rel=1e-8, abs=1e-12)

    def test_side_swap_for_real_potential(self, real_well):
        for lam in (0.7, 2.0, 9.0):
            assert BS.sigma_min(real_well, lam, "+") == pytest.approx(
                BS.sigma_min(real_well, lam, "-"), rel=1e-12)


class TestWeightedResolventH:
    def test_free_model_zero(self, free_radial):
        x = BS.weighted_resolvent_H(free_radial, lam=2.0, side="+")
        assert np.linalg.norm(x, 2) <= 1e-14

    def test_product_identity(self, small_well):
        z = 2.0 + 0.1j
        x = BS.weighted_resolvent_H(small_well, z=z)
        k = BS.bs_matrix(small_well, z=z)
        eye = np.eye(k.shape[0])
        resid = np.linalg.norm((eye - x) @ (eye + k) - eye, 2)
        assert resid <= 1e-10

    def test_boundary_limit_equivalence(self, tuned_well):
        model, _ = tuned_well
        eps = np.geomspace(0.1, 0.1 / 2**6, 7)
        grid = [lam for lam in np.linspace(0.3, 25.0, 40)
                if BS.sigma_min(model, lam, "+") >= 0.1][:3]
        assert grid
        for lam in grid:
            boundary = BS.weighted_resolvent_H(model, lam=lam, side="+")
            vals = [BS.weighted_resolvent_H(model, z=lam + 1j * e) for e in eps]
            ext, err, div = extrapolate_to_zero(LimitSequence(eps, vals, order=4))
            rel = np.linalg.norm(ext - boundary, 2) / np.linalg.norm(boundary, 2)
            assert rel <= 1e-6
            assert not div

    def test_singular_point_flagged(self, tuned_well):
        model, _ = tuned_well
        with pytest.raises(BS.SingularBoundaryError):
            BS.weighted_resolvent_H(model, lam=1.0, side="+", min_sigma=1e-8)


class TestScan:
    def test_free_model_empty(self, free_radial):
        reports = BS.scan_singularities(free_radial, np.linspace(0.2, 9.0, 60))
        assert reports == []

    def test_tuned_well_localized(self, tuned_well):
        model, v0 = tuned_well
        reports = BS.scan_singularities(model, np.linspace(0.2, 3.0, 141))
        assert len(reports) == 1
        rep = reports[0]
        assert rep.kind == "outgoing_singularity"
        assert abs(rep.lam - 1.0) <= 1e-6
        assert rep.sigma_min_minus > BS.REGULAR_FLOOR

    def test_locations_stable_under_node_doubling(self, tuned_well):
        _, v0 = tuned_well
        fine = M.radial_model(M.square_well(v0, 1.0), s=1.5, length=14.0, panels=24)
        reports = BS.scan_singularities(fine, np.linspace(0.2, 3.0, 141))
        assert len(reports) == 1
        assert abs(reports[0].lam - 1.0) <= 1e-6

    def test_threshold_validation(self, free_radial):
        with pytest.raises(ModelError):
            BS.scan_singularities(free_radial, np.linspace(0.2, 3.0, 10),
                                  detection_threshold=0.7)

    def test_range_beyond_grid_resolution(self, free_radial):
        limit = free_radial.max_scan_energy()
        with pytest.raises(AdmissibilityError):
            BS.scan_singularities(free_radial, np.linspace(1.0, 4 * limit, 10))

    def test_fredholm_consistency(self, tuned_well):
        # |det(Id+K)| and sigma_min vanish at the same refined location
        model, _ = tuned_well
        lam_sigma, _ = BS._golden_min(
            lambda l: BS.sigma_min(model, l, "+"), 0.9, 1.1, 1e-9)
        lam_det, _ = BS._golden_min(
            lambda l: BS.log_det(model, lam=l, side="+")[0], 0.9, 1.1, 1e-9)
        assert abs(lam_sigma - lam_det) <= 1e-6


class TestResonantState:
    def test_residual_and_tail(self, tuned_well):
        model, _ = tuned_well
        st = BS.resonant_state(model, 1.0, "+", detection_threshold=1e-3)
        assert st.residual <= 1e-4
        assert abs(st.tail_amplitude) > 1e-3 * st.psi_norm
        assert st.tail_fit_relerr <= 1e-4
        assert abs(st.tail_fit_amplitude - st.tail_amplitude) \
            <= 1e-4 * abs(st.tail_amplitude)

    def test_no_kernel_on_free_model(self, free_radial):
        with pytest.raises(ModelError):
            BS.resonant_state(free_radial, 2.0, "+")

    def test_resonance_classification(self, tuned_well):
        model, _ = tuned_well
        st = BS.resonant_state(model, 1.0, "+", detection_threshold=1e-3)
        assert BS.embedded_eigenvalue_test(st) == "resonance"

    def test_bound_state_classification(self):
        lam_b = -2.0
        v0 = F.tune_bound_state(lam_b)
        model = M.radial_model(M.square_well(v0, 1.0), s=1.5, length=14.0)
        st = BS.resonant_state(model, lam_b, "+", detection_threshold=1e-3)
        assert st.residual <= 1e-4
        assert BS.embedded_eigenvalue_test(st) == "eigenvalue"
        # exterior decays like e^{-sqrt(|lam|) r}
        pts = np.array([4.0, 6.0])
        vals = np.abs(st.psi_at(pts))
        assert vals[1] / vals[0] == pytest.approx(
            math.exp(-math.sqrt(-lam_b) * 2.0), rel=1e-6)

    def test_rank_one_embedded_eigenvalue(self):
        model, _, _ = F.rank_one_embedded_model(lam0=2.0)
        assert BS.sigma_min(model, 2.0, "+") <= 1e-10
        assert BS.sigma_min(model, 2.0, "-") <= 1e-10
        st = BS.resonant_state(model, 2.0, "+", detection_threshold=1e-6)
        assert BS.embedded_eigenvalue_test(st) == "eigenvalue"
        reports = BS.scan_singularities(model, np.linspace(1.5, 2.5, 81))
        assert len(reports) == 1
        assert reports[0].kind == "embedded_eigenvalue"


class TestAdjointAndOrders:
    def test_factorization_identity(self, small_well):
        rep = BS.adjoint_consistency(small_well, 2.0)
        assert rep["identity_residual"] <= 1e-10

    def test_zero_crossings_agree(self, tuned_well):
        model, _ = tuned_well
        rep_at = BS.adjoint_consistency(model, 1.0)
        assert rep_at["sigma_min_MW"] <= 1e-6
        assert rep_at["sigma_min_WM"] <= 1e-4
        rep_off = BS.adjoint_consistency(model, 2.0)
        assert rep_off["sigma_min_MW"] >= 1e-2
        assert rep_off["sigma_min_WM"] >= 1e-2

    def test_adjoint_same_location(self, tuned_well):
        # the incoming boundary operator of H* is the entrywise conjugate
        # of the outgoing one of H: same singularity location
        model, v0 = tuned_well
        f = lambda l: np.linalg.svd(
            np.eye(model.size)
            + np.conj(BS.bs_matrix(model, lam=l, side="+")), compute_uv=False)[-1]
        lam_star, val = BS._golden_min(f, 0.9, 1.1, 1e-9)
        assert val <= 1e-6
        assert abs(lam_star - 1.0) <= 1e-6

    def test_order_one_at_simple_singularity(self, tuned_well):
        model, _ = tuned_well
        eps = np.geomspace(1e-1, 1e-4, 10)
        nu, info = BS.order_estimate(model, 1.0, "+", eps)
        assert nu == 1
        assert not info["ambiguous"]

    def test_order_zero_at_regular_point(self, tuned_well):
        model, _ = tuned_well
        eps = np.geomspace(1e-1, 1e-4, 10)
        nu, _ = BS.order_estimate(model, 2.5, "+", eps)
        assert nu == 0

    def test_no_blowup_from_wrong_side(self):
        # an eigenvalue in the lower half-plane is invisible from above
        model = M.radial_model(M.square_well(-5.0 - 0.5j, 1.0), s=1.5, length=14.0)
        roots = BS.locate_eigenvalues(model, re_range=(-6.0, 2.0), im_range=(-3.0, 3.0))
        assert roots
        z0 = roots[0]["z"]
        eps = np.geomspace(1e-1, 1e-4, 10)
        nu, _ = BS.order_estimate(model, z0.real, "+", eps)
        assert nu == 0


class TestDissipative:
    def test_outgoing_scan_empty(self):
        for g in (0.5, 2.0, 5.0):
            model = F.dissipative_well(g)
            rep = BS.dissipative_audit(model, lam_range=(1e-3, 25.0), n_grid=120)
            assert rep["passed"]
            assert rep["outgoing_detected"] == []
            assert rep["outgoing_sigma_min"] >= 1e-2

    def test_finite_engineered_real_eigenvalue(self):
        # common kernel of V2 and eigenvector of H_V1: H keeps the real
        # eigenvalue and the audit certifies Ker(V2) membership
        h0 = np.diag([1.0, 2.0, 3.0]).astype(complex)
        w2 = np.diag([0.0, 1.0, 2.0])  # positive semidefinite, kills e1
        model = M.finite_model(h0, np.ones(3), -1j * w2)
        rep = BS.dissipative_audit(model)
        assert rep["passed"]
        lams = [e["lambda"] for e in rep["real_eigenvalues"]]
        assert any(abs(l - 1.0) < 1e-10 for l in lams)

    def test_strictly_positive_w2_no_real_eigenvalues(self, rng):
        h0 = rng.standard_normal((6, 6))
        h0 = (h0 + h0.T) / 2
        model = M.finite_model(h0.astype(complex), np.ones(6),
                               -1j * np.eye(6))
        rep = BS.dissipative_audit(model)
        assert all(im < -1e-10 for im in rep["eigenvalue_imag_parts"])

    def test_non_dissipative_refused(self, small_well):
        well = M.radial_model(M.square_well(0.3 + 0.2j, 1.0), s=1.5, length=14.0)
        with pytest.raises(ModelError):
            BS.dissipative_audit(well)


class TestEpsilonBounds:
    def test_free_model_exponents(self, free_radial):
        eps = np.geomspace(1e-1, 1e-4, 10)
        rep = BS.epsilon_bounds_check(free_radial, 4.0, eps)
        assert rep.exponents["r0c"]["exponent"] == pytest.approx(0.5, abs=0.05)
        assert rep.exponents["rh"]["exponent"] <= 1.05
        assert rep.identity_relative_error <= 1e-10

    def test_resolvent_set_plateau(self, small_well):
        eps = np.geomspace(1e-1, 1e-3, 6)
        rep = BS.epsilon_bounds_check(small_well, -1.0, eps)
        assert abs(rep.exponents["r0c"]["exponent"]) <= 0.05
        assert abs(rep.exponents["rh"]["exponent"]) <= 0.05

    def test_needs_enough_samples(self, free_radial):
        with pytest.raises(ModelError):
            BS.epsilon_bounds_check(free_radial, 4.0, [1e-1, 1e-2])


class TestThreshold:
    def test_free_regular(self, free_radial):
        rep = BS.threshold_equivalence_check(free_radial)
        assert rep["class"] == "regular"
        assert rep["side_independent"]

    def test_tuned_zero_energy_resonance(self):
        v0 = F.threshold_well_depth()
        model = M.radial_model(M.square_well(v0, 1.0), s=1.5, length=14.0)
        rep = BS.threshold_equivalence_check(model)
        assert rep["sigma_min_plus"] <= 1e-4
        assert rep["difference"] <= 1e-10
        assert rep["class"] in ("both", "embedded_eigenvalue")

    def test_generic_depth_regular(self):
        model = M.radial_model(M.square_well(-2.0, 1.0), s=1.5, length=14.0)
        rep = BS.threshold_equivalence_check(model)
        assert rep["class"] == "regular"
        assert rep["sigma_min_plus"] > 1e-2

    def test_line_refused(self, line_free):
        with pytest.raises(AdmissibilityError):
            BS.threshold_equivalence_check(line_free)

    def test_weight_requirement(self):
        model = M.radial_model(M.square_well(-2.0, 1.0), s=0.8, length=14.0)
        with pytest.raises(ModelError):
            BS.threshold_equivalence_check(model)


class TestEigenvalues:
    def test_complex_well_matches_matching_equation(self):
        v0 = -5.0 - 0.5j
        model = M.radial_model(M.square_well(v0, 1.0), s=1.5, length=14.0)
        roots = BS.locate_eigenvalues(model, re_range=(-6.0, 2.0), im_range=(-3.0, 3.0))
        assert len(roots) >= 1
        # independent oracle: secant on the decaying-exterior matching
        def match(z):
            kappa = cmath.sqrt(z - v0)
            mu = cmath.sqrt(-z)
            return kappa * cmath.cos(kappa) + mu * cmath.sin(kappa)

        z = roots[0]["z"]
        z_oracle = F._secant(match, z + 0.05, z + 0.07j + 0.02)
        assert abs(z - z_oracle) <= 1e-8
        assert roots[0]["multiplicity"] == 1

    def test_real_well_bound_state(self):
        v0 = F.tune_bound_state(-2.0)
        model = M.radial_model(M.square_well(v0, 1.0), s=1.5, length=14.0)
        roots = BS.locate_eigenvalues(model, re_range=(-6.0, 2.0), im_range=(-2.0, 2.0))
        assert any(abs(r["z"] - (-2.0)) < 1e-7 for r in roots)

    def test_winding_counts_multiplicity(self):
        v0 = -5.0 - 0.5j
        model = M.radial_model(M.square_well(v0, 1.0), s=1.5, length=14.0)
        roots = BS.locate_eigenvalues(model, re_range=(-6.0, 2.0), im_range=(-3.0, 3.0))
        total = BS.eigenvalue_winding(model, roots[0]["z"], radius=0.5, n_nodes=64)
        assert total == sum(r["multiplicity"] for r in roots
                            if abs(r["z"] - roots[0]["z"]) < 0.5)
