"""ADMM baseline on small compressed-sensing instances"""

import numpy as np
import pytest

from core import prox as px
from core.admm import AdmmParams, admm_solve_cs
from core.benchmarks import cs_problem, generate_cs_instance
from core.diagnostics import kkt_certify
from core.problem import IterateState, LinearCoupling
from core.solver import SolveStatus

REG = px.SmoothedPowerRegularizer(q=0.5, epsilon=0.01, weight=0.05)


@pytest.fixture
def instance():
    return generate_cs_instance(60, 40, 0.1, noise_var=0.0, seed=3)


class TestAdmm:
    def test_runs_and_records_steps(self, instance):
        result = admm_solve_cs(instance, REG, AdmmParams(beta=1.0, max_iter=200))
        assert result.status != SolveStatus.DIVERGED
        frame = result.trace.to_frame()
        assert {"step_u", "step_lam"} <= set(frame.columns)
        assert np.isnan(frame["step_u"].iloc[0])
        assert len(frame) == result.iterations + 1

    def test_default_linearization_step(self, instance):
        result = admm_solve_cs(instance, REG, AdmmParams(beta=2.0, max_iter=5))
        norm_m = LinearCoupling.build([instance.M]).norm_estimate
        assert result.params.eta == pytest.approx(0.99 / (2.0 * norm_m ** 2))
        assert result.params.tol_p == pytest.approx(1e-8 * np.sqrt(instance.shape[1]))

    def test_feasibility_improves(self, instance):
        result = admm_solve_cs(instance, REG, AdmmParams(beta=1.0, max_iter=2000))
        infeas = result.trace.column("infeas")
        assert infeas[-1] < 0.1 * np.max(infeas)

    def test_state_certifies_against_stacked_problem(self, instance):
        problem = cs_problem(instance, REG)
        beta = 0.5 / problem.norm_a
        m, n = instance.shape
        start = IterateState(
            x=np.zeros(n + m),
            xi=np.concatenate([np.zeros(n), -instance.v / instance.delta_fid]),
            lam=np.zeros(m),
        )
        result = admm_solve_cs(instance, REG, AdmmParams(beta=1.0, max_iter=2000))
        assert result.state.x.shape == (n + m,)
        assert kkt_certify(result.state, problem, beta) < kkt_certify(start, problem, beta)

    def test_x_first_order(self, instance):
        result = admm_solve_cs(instance, REG, AdmmParams(beta=1.0, max_iter=300, order="x_first"))
        assert result.status != SolveStatus.DIVERGED
        assert np.all(np.isfinite(result.state.x))

    def test_warm_start_resumes_from_state(self, instance):
        first = admm_solve_cs(instance, REG, AdmmParams(beta=1.0, max_iter=3))
        again = admm_solve_cs(instance, REG, AdmmParams(beta=1.0, max_iter=3), init=first.state)
        assert again.trace.records[0].infeas == pytest.approx(first.trace.records[-1].infeas)

    def test_invalid_parameters(self):
        with pytest.raises(ValueError):
            AdmmParams(beta=0.0)
        with pytest.raises(ValueError):
            AdmmParams(eta=-1.0)
