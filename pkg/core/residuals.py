"""
Natural-map residuals, step size and update direction
"""

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .errors import DimensionError
from .problem import IterateState, LinearCoupling, ProblemInstance


@dataclass(frozen=True)
class ResidualBundle:
    e_x: np.ndarray
    e_lam: np.ndarray
    lam_bar: np.ndarray
    ebar_x: np.ndarray
    natural_norm: float
    # A @ ebar_x, shared by step_size and direction
    a_ebar: Optional[np.ndarray] = None

    @property
    def is_zero(self) -> bool:
        return self.natural_norm == 0.0


@dataclass(frozen=True)
class StepSizeBundle:
    phi: float
    psi: float
    alpha: float
    natural_norm: float
    beta_norm: float

    @property
    def alpha_upper(self) -> float:
        """(2 + beta||A||) / (2 (1 - beta||A||)); infinite once beta||A|| >= 1"""
        if self.beta_norm >= 1.0:
            return float("inf")
        return (2.0 + self.beta_norm) / (2.0 * (1.0 - self.beta_norm))

    @property
    def phi_bounds(self) -> tuple:
        e2 = self.natural_norm ** 2
        return 0.5 * (2.0 - self.beta_norm) * e2, 0.5 * (2.0 + self.beta_norm) * e2

    def violations(self, tol: float = 1e-10) -> List[str]:
        """Broken step-size bounds; empty when beta||A|| >= 1 since none are promised there"""
        if self.beta_norm >= 1.0 or self.natural_norm == 0.0:
            return []
        out = []
        scale = 1.0 + self.natural_norm ** 2
        if not self.alpha > 0.5 - tol:
            out.append(f"alpha = {self.alpha:.17g} is not above 1/2")
        if self.alpha > self.alpha_upper + tol:
            out.append(f"alpha = {self.alpha:.17g} exceeds {self.alpha_upper:.17g}")
        lo, hi = self.phi_bounds
        if self.phi < lo - tol * scale:
            out.append(f"phi = {self.phi:.17g} below {lo:.17g}")
        if self.phi > hi + tol * scale:
            out.append(f"phi = {self.phi:.17g} above {hi:.17g}")
        return out


def natural_map(state: IterateState, problem: ProblemInstance, beta: float) -> ResidualBundle:
    """
    e_lam = beta (A x - b)
    e_x   = x - P_X(x - beta (xi - A^T lam))
    ebar  = x - P_X(x - beta (xi - A^T lam_bar)),  lam_bar = lam - e_lam
    """
    coupling = problem.coupling
    if state.x.size != problem.n or state.xi.size != problem.n or state.lam.size != problem.l:
        raise DimensionError(
            f"state (x: {state.x.size}, xi: {state.xi.size}, lam: {state.lam.size}) "
            f"does not match problem (n: {problem.n}, l: {problem.l})"
        )

    e_lam = beta * (coupling.apply(state.x) - coupling.rhs)
    e_x = state.x - problem.project(state.x - beta * (state.xi - coupling.apply_t(state.lam)))
    lam_bar = state.lam - e_lam
    ebar_x = state.x - problem.project(state.x - beta * (state.xi - coupling.apply_t(lam_bar)))

    natural_norm = float(np.sqrt(ebar_x @ ebar_x + e_lam @ e_lam))
    return ResidualBundle(
        e_x=e_x,
        e_lam=e_lam,
        lam_bar=lam_bar,
        ebar_x=ebar_x,
        natural_norm=natural_norm,
        a_ebar=coupling.apply(ebar_x),
    )


def _a_ebar(bundle: ResidualBundle, coupling: LinearCoupling) -> np.ndarray:
    return bundle.a_ebar if bundle.a_ebar is not None else coupling.apply(bundle.ebar_x)


def step_size(bundle: ResidualBundle, beta: float, coupling: LinearCoupling) -> StepSizeBundle:
    a_ebar = _a_ebar(bundle, coupling)
    ee = float(bundle.ebar_x @ bundle.ebar_x)
    ll = float(bundle.e_lam @ bundle.e_lam)
    cross = float(bundle.e_lam @ a_ebar)

    phi = ee + ll - beta * cross
    r = bundle.e_lam - beta * a_ebar
    psi = ee + float(r @ r)
    assert psi > 0.0 or bundle.natural_norm == 0.0, "psi vanished at a nonzero residual"

    return StepSizeBundle(
        phi=phi,
        psi=psi,
        alpha=phi / psi if psi > 0.0 else 0.0,
        natural_norm=bundle.natural_norm,
        beta_norm=beta * coupling.norm_estimate,
    )


def direction(bundle: ResidualBundle, beta: float, coupling: LinearCoupling) -> np.ndarray:
    """d = (ebar_x, e_lam - beta A ebar_x); ||d||^2 == psi"""
    return np.concatenate([bundle.ebar_x, bundle.e_lam - beta * _a_ebar(bundle, coupling)])
