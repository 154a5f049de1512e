"""DDRSM iteration and solve loop"""

import numpy as np
import pandas as pd
import pytest

from core import prox as px
from core.diagnostics import solve_qp_reference
from core.errors import DivergenceError, InitializationError, ValidationFailed
from core.problem import (
    BlockSpec,
    IterateState,
    LinearCoupling,
    ProblemInstance,
    SolverParams,
    fidelity_block,
    l1_block,
    resolve_params,
    smoothed_power_block,
)
from core.residuals import direction, natural_map, step_size
from core.solver import TRACE_COLUMNS, SolveStatus, SolveTrace, ddrsm_iterate, ddrsm_solve, default_init

TIGHT = dict(tol_E=1e-10, tol_p=1e-14, tol_d=1e-14, max_iter=50000)


def _custom_block(prox=None, subgradient=None) -> BlockSpec:
    return BlockSpec(
        name="c",
        dim=1,
        prox=prox or (lambda z, beta: z / (1 + beta)),
        subgradient=subgradient or (lambda x: np.asarray(x, dtype=float)),
        objective=lambda x: 0.5 * float(x @ x),
        projection=lambda x: np.asarray(x, dtype=float).copy(),
        modulus=0.0,
    )


class TestIterate:
    def test_one_step_on_toy(self, toy_problem):
        state = IterateState(x=np.array([1.0]), xi=np.array([1.0]), lam=np.array([0.0]))
        params = SolverParams(beta=0.5, rho=1.0)
        new, bundle, steps = ddrsm_iterate(state, toy_problem, params)

        alpha = 0.625 / 0.578125
        assert steps.phi == pytest.approx(0.625)
        assert steps.psi == pytest.approx(0.578125)
        assert steps.alpha == pytest.approx(alpha)
        z = 1.5 - 0.75 * alpha
        assert new.x[0] == pytest.approx(z / 1.5)
        assert new.xi[0] == pytest.approx(new.x[0])
        assert new.lam[0] == pytest.approx(-0.125 * alpha)
        assert new.k == 1

        d = direction(bundle, 0.5, toy_problem.coupling)
        np.testing.assert_allclose(new.w(0.5), state.w(0.5) - alpha * d, atol=1e-12)

    def test_subgradient_matches_gradient(self, random_qp, rng):
        problem = random_qp(7)
        params = resolve_params(problem, SolverParams())
        state = IterateState(x=rng.standard_normal(problem.n), xi=np.zeros(problem.n), lam=rng.standard_normal(problem.l))
        state.xi = problem.subgradient(state.x)
        for _ in range(5):
            state, _, _ = ddrsm_iterate(state, problem, params)
            np.testing.assert_allclose(state.xi, problem.subgradient(state.x), atol=1e-8)

    def test_compact_form_soak(self, rng):
        m, n = 6, 8
        M = rng.standard_normal((m, n)) / np.sqrt(m)
        reg = px.SmoothedPowerRegularizer(q=0.5, epsilon=0.1, weight=0.05)
        fid = px.QuadraticFidelity(target=rng.standard_normal(m), delta_fid=0.5)
        problem = ProblemInstance(
            blocks=(smoothed_power_block("x", n, reg), fidelity_block("y", fid), l1_block("z", 3, 0.2, lower=0.0)),
            coupling=LinearCoupling.build([M, -np.eye(m), rng.standard_normal((m, 3))]),
        )
        params = SolverParams(beta=0.5 / problem.norm_a, rho=1.3)
        state = default_init(problem)
        for _ in range(500):
            bundle = natural_map(state, problem, params.beta)
            if bundle.is_zero:
                break
            steps = step_size(bundle, params.beta, problem.coupling)
            d = direction(bundle, params.beta, problem.coupling)
            new, _, _ = ddrsm_iterate(state, problem, params, bundle, steps)
            expected = state.w(params.beta) - params.rho * steps.alpha * d
            scale = 1.0 + np.max(np.abs(expected))
            assert np.max(np.abs(new.w(params.beta) - expected)) <= 1e-10 * scale
            state = new


class TestDefaultInit:
    def test_smoothed_and_fidelity_blocks(self):
        reg = px.SmoothedPowerRegularizer()
        fid = px.QuadraticFidelity(target=np.ones(3), delta_fid=1.0)
        problem = ProblemInstance(
            blocks=(smoothed_power_block("x", 2, reg), fidelity_block("y", fid)),
            coupling=LinearCoupling.build([np.ones((3, 2)), -np.eye(3)]),
        )
        state = default_init(problem)
        np.testing.assert_array_equal(state.x, np.zeros(5))
        np.testing.assert_array_equal(state.xi, [0.0, 0.0, -1.0, -1.0, -1.0])
        np.testing.assert_array_equal(state.lam, np.zeros(3))

    def test_undefined_subgradient(self):
        block = _custom_block(subgradient=lambda x: np.full_like(np.asarray(x, dtype=float), np.inf))
        problem = ProblemInstance(blocks=(block,), coupling=LinearCoupling.build([np.eye(1)]))
        with pytest.raises(InitializationError):
            default_init(problem)


class TestSolve:
    def test_toy_converges(self, toy_problem):
        result = ddrsm_solve(toy_problem, SolverParams(beta=0.5))
        assert result.status == SolveStatus.CONVERGED
        assert abs(result.state.x[0]) < 1e-5
        assert result.trace.records[-1].E_norm <= result.params.tol_E

    def test_random_qps_reach_kkt_solution(self, random_qp):
        for seed in range(20):
            problem = random_qp(seed, dims=(3, 2, 2), rows=3, diagonal_last=bool(seed % 2))
            params = resolve_params(problem, SolverParams(**TIGHT))
            reference = solve_qp_reference(problem, params.beta)
            result = ddrsm_solve(problem, params)
            assert result.status == SolveStatus.CONVERGED, f"seed {seed}"
            assert np.linalg.norm(result.state.x - reference.x) <= 1e-5
            assert result.bound_violations == 0

    def test_start_at_solution(self, random_qp):
        problem = random_qp(2)
        params = resolve_params(problem, SolverParams())
        reference = solve_qp_reference(problem, params.beta)
        result = ddrsm_solve(problem, params, init=reference.state())
        assert result.status == SolveStatus.CONVERGED
        assert result.iterations == 0
        assert len(result.trace) == 1

    def test_iteration_budget(self, random_qp):
        result = ddrsm_solve(random_qp(0), SolverParams(max_iter=3, tol_E=1e-30, tol_p=0.0, tol_d=0.0))
        assert result.status == SolveStatus.MAX_ITER
        assert result.iterations == 3
        assert len(result.trace) <= 4

    def test_invalid_beta_refused(self, toy_problem):
        with pytest.raises(ValidationFailed) as info:
            ddrsm_solve(toy_problem, SolverParams(beta=5.0))
        assert any("1/‖A‖" in v for v in info.value.violations)

    def test_divergence(self):
        block = _custom_block(prox=lambda z, beta: np.full_like(z, np.nan))
        problem = ProblemInstance(blocks=(block,), coupling=LinearCoupling.build([np.eye(1)], [1.0]))
        result = ddrsm_solve(problem, SolverParams(beta=0.5))
        assert result.status == SolveStatus.DIVERGED
        with pytest.raises(DivergenceError):
            ddrsm_solve(problem, SolverParams(beta=0.5, strict=True))

    def test_plateau_stops_as_stalled(self):
        # x is pinned at 0 while x = 1 is required, so the natural map levels off at beta sqrt(1.16)
        block = _custom_block(prox=lambda z, beta: np.zeros_like(z),
                              subgradient=lambda x: np.zeros_like(np.asarray(x, dtype=float)))
        problem = ProblemInstance(blocks=(block,), coupling=LinearCoupling.build([np.eye(1)], [1.0]))
        result = ddrsm_solve(problem, SolverParams(beta=0.5, max_iter=5000, stall_window=50))
        assert result.status == SolveStatus.STALLED
        assert 50 <= result.iterations < 5000
        assert result.trace.records[-1].E_norm == pytest.approx(0.5 * np.sqrt(1.16), rel=1e-6)

        unguarded = ddrsm_solve(problem, SolverParams(beta=0.5, max_iter=300, stall_window=0))
        assert unguarded.status == SolveStatus.MAX_ITER
        assert unguarded.iterations == 300

    def test_negative_stall_window_rejected(self):
        with pytest.raises(ValueError):
            SolverParams(stall_window=-1)

    def test_trace_layout_and_monitor(self, random_qp):
        problem = random_qp(4)
        result = ddrsm_solve(problem, SolverParams(max_iter=30), monitor=lambda s: {"x0": s.x[0]})
        frame = result.trace.to_frame()
        assert list(frame.columns) == TRACE_COLUMNS + ["x0"]
        assert frame["k"].tolist() == list(range(len(frame)))
        np.testing.assert_allclose(frame["x0"].iloc[-1], result.state.x[0])
        assert frame["dist_ref"].isna().all()

    def test_timings_can_be_blanked(self, random_qp):
        frame = ddrsm_solve(random_qp(4), SolverParams(max_iter=5)).trace.to_frame(record_timings=False)
        assert frame["time_ms"].isna().all()
        back = SolveTrace.from_frame(frame)
        np.testing.assert_allclose(back.column("E_norm"), frame["E_norm"].to_numpy())

    def test_parallel_blocks_are_deterministic(self, random_qp):
        problem = random_qp(5, dims=(4, 3, 2), rows=3)
        serial = ddrsm_solve(problem, SolverParams(max_iter=200))
        parallel = ddrsm_solve(problem, SolverParams(max_iter=200, parallel_blocks=3))
        pd.testing.assert_frame_equal(serial.trace.to_frame(False), parallel.trace.to_frame(False))
        np.testing.assert_array_equal(serial.state.x, parallel.state.x)
