"""Shared fixtures: seeded generators, random convex QPs and a 1-D grid-search prox oracle"""

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from core.problem import LinearCoupling, ProblemInstance, diag_quadratic_block, quadratic_block


def _grid_argmin(objective, x: float, step: float = 1e-3, xatol: float = 1e-9, extra=()) -> float:
    radius = abs(x) + 3.0
    grid = np.arange(-radius, radius + step, step)
    best = float(grid[np.argmin(objective(grid))])
    refined = minimize_scalar(objective, bounds=(best - 2 * step, best + 2 * step), method="bounded",
                              options={"xatol": xatol})
    candidates = [best, float(refined.x), 0.0, *extra]
    return min(candidates, key=lambda y: float(objective(np.asarray(y))))


def _random_qp(seed: int, dims=(3, 2), rows: int = 2, diagonal_last: bool = False) -> ProblemInstance:
    rng = np.random.default_rng(seed)
    blocks, matrices = [], []
    for i, d in enumerate(dims):
        c = rng.standard_normal(d)
        if diagonal_last and i == len(dims) - 1:
            blocks.append(diag_quadratic_block(f"b{i}", rng.uniform(0.5, 2.0, d), c))
        else:
            B = rng.standard_normal((d, d))
            blocks.append(quadratic_block(f"b{i}", np.eye(d) + 0.5 * B @ B.T / d, c))
        matrices.append(rng.standard_normal((rows, d)) / np.sqrt(sum(dims)))
    coupling = LinearCoupling.build(matrices, rng.standard_normal(rows), seed=seed)
    return ProblemInstance(blocks=tuple(blocks), coupling=coupling)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def grid_argmin():
    """argmin_y objective(y) near x: step-1e-3 grid on [-|x|-3, |x|+3], then bounded refinement"""
    return _grid_argmin


@pytest.fixture
def random_qp():
    """Factory for strongly convex equality-constrained QPs with full-row-rank coupling"""
    return _random_qp


@pytest.fixture
def toy_problem():
    """min x^2/2 s.t. x = 0"""
    coupling = LinearCoupling.build([np.array([[1.0]])], [0.0])
    return ProblemInstance(blocks=(quadratic_block("x", [[1.0]]),), coupling=coupling)
