"""Natural map, step size and direction"""

import numpy as np
import pytest

from core.errors import DimensionError
from core.problem import IterateState, LinearCoupling
from core.residuals import ResidualBundle, direction, natural_map, step_size


def _bundle(ebar, e_lam) -> ResidualBundle:
    ebar, e_lam = np.asarray(ebar, dtype=float), np.asarray(e_lam, dtype=float)
    return ResidualBundle(
        e_x=ebar,
        e_lam=e_lam,
        lam_bar=-e_lam,
        ebar_x=ebar,
        natural_norm=float(np.sqrt(ebar @ ebar + e_lam @ e_lam)),
    )


def _unit_norm_coupling(rng, rows, cols) -> LinearCoupling:
    A = rng.standard_normal((rows, cols))
    A /= np.linalg.norm(A, 2)
    return LinearCoupling(matrices=(A,), rhs=np.zeros(rows), norm_estimate=1.0)


class TestNaturalMap:
    def test_hand_evaluated_toy(self, toy_problem):
        state = IterateState(x=np.array([1.0]), xi=np.array([1.0]), lam=np.array([0.0]))
        bundle = natural_map(state, toy_problem, 0.5)
        assert bundle.e_lam[0] == pytest.approx(0.5)
        assert bundle.lam_bar[0] == pytest.approx(-0.5)
        assert bundle.e_x[0] == pytest.approx(0.5)
        assert bundle.ebar_x[0] == pytest.approx(0.75)
        assert bundle.natural_norm == pytest.approx(np.hypot(0.75, 0.5))

    def test_vanishes_at_kkt_point(self, toy_problem):
        state = IterateState(x=np.zeros(1), xi=np.zeros(1), lam=np.zeros(1))
        bundle = natural_map(state, toy_problem, 0.5)
        assert bundle.is_zero
        np.testing.assert_array_equal(bundle.lam_bar, state.lam)

    def test_feasible_point_with_zero_duals(self, random_qp, rng):
        problem = random_qp(3)
        A = problem.coupling.to_dense()
        x = np.linalg.lstsq(A, problem.coupling.rhs, rcond=None)[0]
        bundle = natural_map(IterateState(x=x, xi=np.zeros(problem.n), lam=np.zeros(problem.l)), problem, 0.3)
        assert bundle.natural_norm < 1e-12

    def test_predictor_identity(self, random_qp, rng):
        problem = random_qp(1)
        state = IterateState(x=rng.standard_normal(problem.n), xi=rng.standard_normal(problem.n),
                             lam=rng.standard_normal(problem.l))
        bundle = natural_map(state, problem, 0.4)
        np.testing.assert_array_equal(bundle.lam_bar, state.lam - bundle.e_lam)

    def test_dimension_mismatch(self, toy_problem):
        state = IterateState(x=np.zeros(2), xi=np.zeros(2), lam=np.zeros(1))
        with pytest.raises(DimensionError):
            natural_map(state, toy_problem, 0.5)


class TestStepSize:
    def test_cross_terms_vanish(self):
        coupling = LinearCoupling(matrices=(np.array([[1.0, 0.0]]),), rhs=np.zeros(1), norm_estimate=1.0)
        steps = step_size(_bundle([0.0, 2.0], [0.0]), 0.5, coupling)
        assert steps.phi == pytest.approx(4.0)
        assert steps.psi == pytest.approx(4.0)
        assert steps.alpha == pytest.approx(1.0)

    def test_upper_bound_with_unit_norm(self, rng):
        coupling = _unit_norm_coupling(rng, 4, 6)
        for _ in range(200):
            steps = step_size(_bundle(rng.standard_normal(6), rng.standard_normal(4)), 0.5, coupling)
            assert steps.alpha_upper == pytest.approx(2.5)
            assert 0.5 < steps.alpha <= 2.5
            assert steps.violations() == []

    def test_sandwich_bounds_at_high_coupling(self, rng):
        coupling = _unit_norm_coupling(rng, 5, 5)
        beta = 0.9
        for _ in range(200):
            steps = step_size(_bundle(rng.standard_normal(5), rng.standard_normal(5)), beta, coupling)
            lo, hi = steps.phi_bounds
            assert lo - 1e-10 <= steps.phi <= hi + 1e-10
            assert steps.violations(1e-10) == []

    def test_alpha_two_ways(self, rng):
        coupling = _unit_norm_coupling(rng, 3, 7)
        A = coupling.to_dense()
        beta = 0.9
        ebar, e_lam = rng.standard_normal(7), rng.standard_normal(3)
        steps = step_size(_bundle(ebar, e_lam), beta, coupling)
        cross = e_lam @ (A @ ebar)
        phi = ebar @ ebar + e_lam @ e_lam - beta * cross
        psi = ebar @ ebar + e_lam @ e_lam - 2 * beta * cross + beta ** 2 * (A @ ebar) @ (A @ ebar)
        assert steps.alpha == pytest.approx(phi / psi, rel=1e-12)

    def test_no_bounds_promised_beyond_inverse_norm(self, rng):
        coupling = _unit_norm_coupling(rng, 3, 3)
        steps = step_size(_bundle(rng.standard_normal(3), rng.standard_normal(3)), 1.5, coupling)
        assert steps.alpha_upper == float("inf")
        assert steps.violations() == []


class TestDirection:
    def test_zero_bundle(self, toy_problem):
        d = direction(_bundle([0.0], [0.0]), 0.5, toy_problem.coupling)
        np.testing.assert_array_equal(d, np.zeros(2))

    def test_decoupled_multiplier_component(self):
        coupling = LinearCoupling(matrices=(np.array([[1.0, 0.0]]),), rhs=np.zeros(1), norm_estimate=1.0)
        d = direction(_bundle([0.0, 3.0], [0.7]), 0.5, coupling)
        np.testing.assert_allclose(d, [0.0, 3.0, 0.7])

    def test_squared_norm_equals_psi(self, rng):
        coupling = _unit_norm_coupling(rng, 4, 9)
        for _ in range(50):
            bundle = _bundle(rng.standard_normal(9), rng.standard_normal(4))
            d = direction(bundle, 0.7, coupling)
            assert d @ d == pytest.approx(step_size(bundle, 0.7, coupling).psi, rel=1e-12)
