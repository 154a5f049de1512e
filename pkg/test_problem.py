"""Problem model: coupling, norm estimate, admissible beta, validation and config loading"""

import json
import math
import re
from pathlib import Path

import numpy as np
import pytest

from core import prox as px
from core.errors import ConfigError, DimensionError, InvalidModulusError
from core.problem import (
    BlockSpec,
    IterateState,
    LinearCoupling,
    ProblemInstance,
    SolverParams,
    admissible_beta_upper,
    beta_admissible_range,
    fidelity_block,
    half_block,
    quadratic_block,
    resolve_params,
    smoothed_power_block,
    spectral_norm_estimate,
    validate_problem,
)
from core.storage import build_problem, load_config
from models.schemas import CsBenchConfig, ProblemConfig, RunFile

CONFIGS = Path(__file__).parent / "configs"


class TestSpectralNorm:
    def test_identity(self):
        coupling = LinearCoupling(matrices=(np.eye(5),), rhs=np.zeros(5))
        assert spectral_norm_estimate(coupling) == pytest.approx(1.0, abs=1e-6)

    def test_diagonal(self):
        coupling = LinearCoupling(matrices=(np.diag([3.0, 1.0]),), rhs=np.zeros(2))
        assert spectral_norm_estimate(coupling) == pytest.approx(3.0, abs=1e-3)

    def test_random_matches_svd(self, rng):
        A = rng.standard_normal((20, 30))
        coupling = LinearCoupling(matrices=(A[:, :12], A[:, 12:]), rhs=np.zeros(20))
        assert spectral_norm_estimate(coupling) == pytest.approx(np.linalg.norm(A, 2), rel=1e-3)

    def test_zero_matrix(self):
        coupling = LinearCoupling(matrices=(np.zeros((3, 4)),), rhs=np.zeros(3))
        assert spectral_norm_estimate(coupling) == 0.0

    def test_monotone_in_iterations(self, rng):
        coupling = LinearCoupling(matrices=(rng.standard_normal((8, 6)),), rhs=np.zeros(8))
        estimates = [spectral_norm_estimate(coupling, k, seed=3) for k in (1, 2, 5, 20, 100)]
        assert estimates == sorted(estimates)

    def test_build_inflates_estimate(self):
        coupling = LinearCoupling.build([np.eye(4)], safety=1.01)
        assert coupling.norm_estimate == pytest.approx(1.01, abs=1e-6)


class TestCoupling:
    def test_apply_and_transpose(self, rng):
        A1, A2 = rng.standard_normal((3, 2)), rng.standard_normal((3, 4))
        coupling = LinearCoupling.build([A1, A2], np.ones(3))
        x, lam = rng.standard_normal(6), rng.standard_normal(3)
        dense = np.hstack([A1, A2])
        np.testing.assert_allclose(coupling.apply(x), dense @ x)
        np.testing.assert_allclose(coupling.apply_t(lam), dense.T @ lam)
        np.testing.assert_allclose(coupling.to_dense(), dense)

    def test_row_mismatch(self):
        with pytest.raises(DimensionError):
            LinearCoupling.build([np.eye(2), np.eye(3)])

    def test_rhs_mismatch(self):
        with pytest.raises(DimensionError):
            LinearCoupling.build([np.eye(2)], [1.0, 2.0, 3.0])


class TestAdmissibleBeta:
    def test_convex_case(self):
        assert admissible_beta_upper(0.0, 2.0, 5.0) == pytest.approx(0.5)

    def test_weakly_convex_cases(self):
        assert admissible_beta_upper(1.0, 1.0, 1.0) == pytest.approx(0.5)
        assert admissible_beta_upper(4.0, 0.0, 1.0) == pytest.approx(0.125)

    def test_negative_modulus(self):
        with pytest.raises(InvalidModulusError):
            admissible_beta_upper(-1.0, 1.0)

    def test_range_contains_interior_points(self, toy_problem):
        interval = beta_admissible_range(toy_problem)
        assert 0.5 / toy_problem.norm_a in interval
        assert interval.upper not in interval
        assert 0.0 not in interval


class TestValidation:
    def test_toy_problem_is_runnable(self, toy_problem):
        report = validate_problem(toy_problem, SolverParams(beta=0.5))
        assert report.runnable
        assert report.violations == []
        assert report.c0 == 0.0

    def test_beta_beyond_inverse_norm(self, toy_problem):
        report = validate_problem(toy_problem, SolverParams(beta=2.0))
        assert not report.runnable
        assert any("1/‖A‖" in v for v in report.violations)

    def test_rho_out_of_range(self, toy_problem):
        for rho in (0.0, 2.0, -1.0):
            report = validate_problem(toy_problem, SolverParams(beta=0.5, rho=rho))
            assert any("ρ must lie in (0,2)" in v for v in report.violations)

    def test_dimension_mismatch(self):
        coupling = LinearCoupling.build([np.eye(2)])
        problem = ProblemInstance(blocks=(quadratic_block("x", np.eye(3)),), coupling=coupling)
        report = validate_problem(problem, SolverParams(beta=0.1))
        assert any(v.startswith("dimension mismatch") for v in report.violations)

    def test_unset_modulus(self):
        block = quadratic_block("x", [[1.0]])
        custom = BlockSpec(name="c", dim=1, prox=block.prox, subgradient=block.subgradient,
                           objective=block.objective, projection=block.projection, modulus=None)
        problem = ProblemInstance(blocks=(custom,), coupling=LinearCoupling.build([np.eye(1)]))
        report = validate_problem(problem, SolverParams(beta=0.1))
        assert any("modulus unset" in v for v in report.violations)

    def test_weakly_convex_warning(self):
        reg = px.SmoothedPowerRegularizer(q=0.5, epsilon=0.01)
        fid = px.QuadraticFidelity(target=np.zeros(2), delta_fid=1.0)
        problem = ProblemInstance(
            blocks=(smoothed_power_block("x", 2, reg), fidelity_block("y", fid)),
            coupling=LinearCoupling.build([np.eye(2), -np.eye(2)]),
        )
        assert problem.c0 == pytest.approx(250.0)
        report = validate_problem(problem, SolverParams(beta=0.01))
        assert report.runnable
        assert report.warnings

    def test_negative_dimension_raises(self):
        block = quadratic_block("x", [[1.0]])
        broken = BlockSpec(name="x", dim=-1, prox=block.prox, subgradient=block.subgradient,
                           objective=block.objective, projection=block.projection, modulus=0.0)
        problem = ProblemInstance(blocks=(broken,), coupling=LinearCoupling.build([np.eye(1)]))
        with pytest.raises(DimensionError):
            validate_problem(problem, SolverParams(beta=0.1))

    def test_resolved_defaults_pass_validation(self, random_qp):
        for seed in range(5):
            problem = random_qp(seed)
            params = resolve_params(problem, SolverParams())
            assert params.beta * problem.norm_a < 1.0
            assert params.tol_E == pytest.approx(1e-6 * math.sqrt(problem.n + problem.l))
            assert validate_problem(problem, params).runnable

    def test_default_beta_with_unbounded_modulus(self):
        problem = ProblemInstance(blocks=(half_block("x", 3),), coupling=LinearCoupling.build([np.eye(3)], [1.0, 0, 0]))
        params = resolve_params(problem, SolverParams())
        assert 0.0 < params.beta * problem.norm_a < 1.0


class TestIterateState:
    def test_w_round_trip(self, rng):
        state = IterateState(x=rng.standard_normal(4), xi=rng.standard_normal(4), lam=rng.standard_normal(2))
        back = IterateState.from_w(state.w(0.3), state.x, 0.3)
        np.testing.assert_allclose(back.xi, state.xi, rtol=1e-12, atol=1e-12)
        np.testing.assert_array_equal(back.lam, state.lam)


class TestConfigLoading:
    def test_bundled_problem_files(self):
        for name in ("toy_1d.json", "qp_2block.json"):
            run = load_config(CONFIGS / name, RunFile)
            problem = build_problem(run.problem, CONFIGS)
            assert problem.n == sum(b.dim for b in problem.blocks)
            assert validate_problem(problem, resolve_params(problem, run.solver)).runnable

    def test_parse_error_reports_line_and_column(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text('{\n  "problem": {\n    "blocks": [,]\n  }\n}\n')
        with pytest.raises(ConfigError, match=r"broken\.json:3:\d+"):
            load_config(path, RunFile)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "nope.json", RunFile)

    def test_schema_violation(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"problem": {"blocks": [{"name": "x", "kind": "quadratic", "dim": 2}],
                                                "coupling": {"matrices": [{"inline": [[1, 0]]}]}}}))
        with pytest.raises(ConfigError, match="hessian"):
            load_config(path, RunFile)

    def test_schema_violation_names_field_path(self, tmp_path):
        path = tmp_path / "grid.json"
        path.write_text(json.dumps({"cells": [{"m_rows": 10, "n": 5, "sparsity": 0.1},
                                              {"m_rows": 10, "n": 5, "sparsity": 2.0}]}))
        with pytest.raises(ConfigError) as info:
            load_config(path, CsBenchConfig)
        assert "cells.1.sparsity" in info.value.detail
        assert not re.search(r"grid\.json:\d+", info.value.detail)

    def test_matrix_sources(self, tmp_path):
        np.save(tmp_path / "A.npy", np.array([[1.0, 2.0]]))
        config = ProblemConfig.model_validate({
            "blocks": [
                {"name": "a", "kind": "l1", "dim": 2, "weight": 0.1, "lower": 0.0},
                {"name": "b", "kind": "half", "dim": 3},
                {"name": "c", "kind": "smoothed_power", "dim": 2},
            ],
            "coupling": {
                "matrices": [
                    {"file": "A.npy"},
                    {"generator": {"kind": "gaussian", "rows": 1, "cols": 3, "seed": 4}},
                    {"generator": {"kind": "zeros", "rows": 1, "cols": 2}},
                ],
                "rhs": [1.0],
            },
        })
        problem = build_problem(config, tmp_path)
        assert problem.dims == (2, 3, 2)
        np.testing.assert_allclose(problem.coupling.to_dense()[0, :2], [1.0, 2.0])
        assert problem.c0 == math.inf
