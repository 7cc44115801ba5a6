import numpy as np
import pytest

from specres import numerics as N


def random_matrix(rng, n):
    return rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))


class TestEig:
    def test_diagonal(self):
        res = N.eig(np.diag([1.0, 2.0]))
        assert sorted(res.eigenvalues.real) == [1.0, 2.0]
        assert not res.defective

    def test_nilpotent_jordan_block_flagged(self):
        res = N.eig(np.array([[0.0, 1.0], [0.0, 0.0]]))
        assert np.allclose(res.eigenvalues, 0.0)
        assert res.defective

    def test_random_residual_certificates(self, rng):
        for _ in range(20):
            a = random_matrix(rng, 6)
            res = N.eig(a)
            norm_a = np.linalg.norm(a, 2)
            for lam, v in zip(res.eigenvalues, res.right_eigenvectors.T):
                assert np.linalg.norm(a @ v - lam * v) <= 1e-10 * norm_a * np.linalg.norm(v)


class TestSolve:
    def test_identity(self):
        b = np.array([1.0 + 2j, -3.0])
        assert np.allclose(N.solve_linear(np.eye(2), b), b)

    def test_diagonal(self):
        x = N.solve_linear(np.diag([2.0, 4.0j]), np.array([2.0, 4.0j]))
        assert np.allclose(x, [1.0, 1.0])

    def test_random_residual(self, rng):
        for _ in range(10):
            a = random_matrix(rng, 8) + 4 * np.eye(8)
            b = rng.standard_normal(8) + 1j * rng.standard_normal(8)
            x = N.solve_linear(a, b)
            resid = np.linalg.norm(a @ x - b)
            assert resid <= 1e-10 * np.linalg.norm(a, 2) * np.linalg.norm(x) + 1e-13 * np.linalg.norm(b)

    def test_singular_reports_pivot(self):
        with pytest.raises(N.SingularMatrixError) as err:
            N.solve_linear(np.array([[1.0, 1.0], [1.0, 1.0]]), np.ones(2))
        assert err.value.smallest_pivot < 1e-12


class TestSingularValueAndDeterminant:
    def test_identity(self):
        assert N.smallest_singular_value(np.eye(3)) == pytest.approx(1.0)

    def test_diagonal(self):
        assert N.smallest_singular_value(np.diag([3.0, 1e-3])) == pytest.approx(1e-3)

    def test_matches_hermitian_oracle(self, rng):
        a = random_matrix(rng, 7)
        oracle = np.sqrt(np.linalg.eigvalsh(a.conj().T @ a).min())
        assert N.smallest_singular_value(a) == pytest.approx(oracle, rel=1e-9)

    def test_det_identity(self):
        assert N.determinant(np.eye(4)) == pytest.approx(1.0)

    def test_det_diagonal(self):
        assert N.determinant(np.diag([2.0, 3.0j])) == pytest.approx(6.0j)

    def test_det_matches_eigenvalue_product(self, rng):
        a = random_matrix(rng, 6)
        prod = np.prod(N.eig(a).eigenvalues)
        assert abs(N.determinant(a) - prod) <= 1e-8 * abs(prod)

    def test_det_multiplicative(self, rng):
        for _ in range(5):
            a = random_matrix(rng, 6) + 3 * np.eye(6)
            b = random_matrix(rng, 6) + 3 * np.eye(6)
            lhs = N.determinant(a @ b)
            rhs = N.determinant(a) * N.determinant(b)
            assert abs(lhs - rhs) <= 1e-8 * abs(rhs)


class TestQuadrature:
    def test_midpoint_rule(self):
        rule = N.gauss_legendre(1, 0.0, 2.0)
        assert rule.nodes[0] == pytest.approx(1.0)
        assert rule.weights[0] == pytest.approx(2.0)

    def test_two_point_nodes(self):
        rule = N.gauss_legendre(2, -1.0, 1.0)
        assert np.allclose(rule.nodes, [-1 / np.sqrt(3), 1 / np.sqrt(3)])
        assert np.allclose(rule.weights, [1.0, 1.0])

    def test_odd_cubic_vanishes(self):
        rule = N.gauss_legendre(5, -1.0, 1.0)
        assert abs(rule.integrate(rule.nodes**3)) < 1e-14

    @pytest.mark.parametrize("n", [2, 5, 9])
    def test_polynomial_exactness(self, n, rng):
        rule = N.gauss_legendre(n, -0.5, 1.5)
        coeffs = rng.standard_normal(2 * n)
        poly = np.polynomial.Polynomial(coeffs)
        exact = poly.integ()(1.5) - poly.integ()(-0.5)
        assert rule.integrate(poly(rule.nodes)) == pytest.approx(exact, abs=1e-12)

    def test_invalid_interval(self):
        with pytest.raises(N.NumericsError):
            N.gauss_legendre(4, 1.0, 1.0)


class TestExtrapolation:
    def test_constant(self):
        seq = N.LimitSequence(np.array([0.1, 0.05]), [3.0 + 0j, 3.0 + 0j], order=1)
        value, err, div = N.extrapolate_to_zero(seq)
        assert value == pytest.approx(3.0)
        assert err == pytest.approx(0.0, abs=1e-14)
        assert not div

    def test_linear(self):
        eps = np.array([0.1, 0.05, 0.025])
        seq = N.LimitSequence(eps, [1.0 + e for e in eps], order=1)
        value, _, _ = N.extrapolate_to_zero(seq)
        assert value == pytest.approx(1.0, abs=1e-12)

    def test_quadratic_needs_order_two(self):
        eps = np.array([0.1, 0.05, 0.025])
        vals = [1.0 + e + e**2 for e in eps]
        value, _, _ = N.extrapolate_to_zero(N.LimitSequence(eps, vals, order=2))
        assert value == pytest.approx(1.0, abs=1e-6)

    def test_exact_on_polynomials(self, rng):
        for order in (1, 2, 3):
            eps = np.geomspace(0.2, 0.2 / 2**order, order + 1)
            coeffs = rng.standard_normal(order + 1)
            vals = [np.polynomial.Polynomial(coeffs)(e) for e in eps]
            value, _, _ = N.extrapolate_to_zero(N.LimitSequence(eps, vals, order=order))
            assert value == pytest.approx(coeffs[0], abs=1e-10)

    def test_divergence_flag(self):
        eps = np.array([0.1, 0.05, 0.025, 0.0125])
        vals = [1.0 / e for e in eps]  # blows up: no finite limit
        _, _, div = N.extrapolate_to_zero(N.LimitSequence(eps, vals, order=3))
        assert div

    def test_matrix_values(self):
        eps = np.array([0.1, 0.05, 0.025])
        base = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=complex)
        vals = [base + e * np.ones((2, 2)) for e in eps]
        value, _, _ = N.extrapolate_to_zero(N.LimitSequence(eps, vals, order=1))
        assert np.allclose(value, base, atol=1e-12)


class TestMatrixExponential:
    def test_t_zero(self, rng):
        a = random_matrix(rng, 5)
        u = rng.standard_normal(5) + 0j
        assert np.allclose(N.matrix_exponential_apply(a, 0.0, u), u)

    def test_diagonal_decay(self):
        a = np.diag([1.0, 2.0 - 0.5j])
        u = np.array([0.0, 1.0])
        out = N.matrix_exponential_apply(a, 2.0, u)
        assert np.linalg.norm(out) == pytest.approx(np.exp(-1.0))

    def test_group_bound(self, rng):
        h0 = rng.standard_normal((8, 8))
        h0 = (h0 + h0.T) / 2
        v = 0.4 * random_matrix(rng, 8)
        a = h0 + v
        norm_v = np.linalg.norm(v, 2)
        u = rng.standard_normal(8) + 1j * rng.standard_normal(8)
        for t in np.linspace(-5, 5, 11):
            out = N.matrix_exponential_apply(a, t, u)
            assert np.linalg.norm(out) <= np.exp(abs(t) * norm_v) * np.linalg.norm(u) * (1 + 1e-9)

    def test_group_property(self, rng):
        a = random_matrix(rng, 6)
        u = rng.standard_normal(6) + 0j
        one_two = N.matrix_exponential_apply(a, 1.3, N.matrix_exponential_apply(a, 0.7, u))
        direct = N.matrix_exponential_apply(a, 2.0, u)
        assert np.linalg.norm(one_two - direct) <= 1e-9 * np.linalg.norm(direct)

    def test_overflow_guard(self):
        with pytest.raises(OverflowError):
            N.matrix_exponential_apply(1e3 * np.eye(2) * 1j, 1e3, np.ones(2))
