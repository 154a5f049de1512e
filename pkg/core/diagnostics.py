"""
Post-hoc checks on solver traces: KKT certification, linear-rate fits,
error-bound probing and the Fejér distance-decrease inequality.

Distances dist(w^k, w*) are recorded in the trace's dist_ref column when a
reference is passed to ddrsm_solve; every check here reads them from there.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import scipy.linalg
from pydantic import BaseModel
from scipy.stats import linregress

from .errors import (
    FejerRefusedError,
    InsufficientTraceError,
    ReferenceCertificationError,
    SolverError,
)
from .problem import IterateState, ProblemInstance
from .residuals import natural_map
from .solver import SolveTrace

logger = logging.getLogger(__name__)

CERTIFY_TOL = 1e-10


@dataclass(frozen=True)
class ReferenceSolution:
    x: np.ndarray
    xi: np.ndarray
    lam: np.ndarray
    beta: float
    provenance: str = "oracle-solved"

    def w(self, beta: Optional[float] = None) -> np.ndarray:
        b = self.beta if beta is None else beta
        return np.concatenate([self.x + b * self.xi, self.lam])

    def state(self) -> IterateState:
        return IterateState(x=self.x.copy(), xi=self.xi.copy(), lam=self.lam.copy())

    def to_dict(self) -> dict:
        return {
            "x": self.x.tolist(),
            "xi": self.xi.tolist(),
            "lam": self.lam.tolist(),
            "beta": self.beta,
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ReferenceSolution":
        return cls(
            x=np.asarray(data["x"], dtype=float),
            xi=np.asarray(data["xi"], dtype=float),
            lam=np.asarray(data["lam"], dtype=float),
            beta=float(data["beta"]),
            provenance=data.get("provenance", "oracle-solved"),
        )


class RateFit(BaseModel):
    factor: float
    slope: float
    intercept: float
    r_squared: float
    window: Tuple[int, int]
    points: int
    non_contractive: bool


class ErrorBoundProbe(BaseModel):
    tau_hat: float
    radius: float
    points: int


class FejerReport(BaseModel):
    constant: float
    checked: int
    violations: int
    fraction: float
    worst_margin: float
    violating_iterations: List[int]


def kkt_certify(state: IterateState, problem: ProblemInstance, beta: float) -> float:
    """Natural-map norm at the state; zero exactly at KKT points"""
    return natural_map(state, problem, beta).natural_norm


def build_reference(problem: ProblemInstance, state: IterateState, beta: float,
                    provenance: str = "analytic", tol: float = CERTIFY_TOL) -> ReferenceSolution:
    residual = kkt_certify(state, problem, beta)
    if residual > tol:
        raise ReferenceCertificationError(f"reference fails KKT certification: ‖E‖ = {residual:.3e} > {tol:.1e}")
    return ReferenceSolution(x=state.x.copy(), xi=state.xi.copy(), lam=state.lam.copy(), beta=beta,
                             provenance=provenance)


def solve_qp_reference(problem: ProblemInstance, beta: float, tol: float = CERTIFY_TOL) -> ReferenceSolution:
    """
    Solve [Q -A^T; A 0][x; lam] = [-c; b] for problems whose blocks are all
    unconstrained quadratics and certify the result.
    """
    missing = [b.name for b in problem.blocks if b.quadratic is None]
    if missing:
        raise ReferenceCertificationError(f"no quadratic form for block(s) {missing}; QP reference unavailable")

    hessians = [np.diag(Q) if Q.ndim == 1 else Q for Q, _ in (b.quadratic for b in problem.blocks)]
    Q = scipy.linalg.block_diag(*hessians)
    c = np.concatenate([b.quadratic[1] for b in problem.blocks])
    A = problem.coupling.to_dense()
    n, l = problem.n, problem.l

    K = np.block([[Q, -A.T], [A, np.zeros((l, l))]])
    rhs = np.concatenate([-c, problem.coupling.rhs])
    try:
        sol = scipy.linalg.solve(K, rhs)
    except scipy.linalg.LinAlgError as e:
        raise ReferenceCertificationError(f"KKT system is singular: {e}")

    x, lam = sol[:n], sol[n:]
    state = IterateState(x=x, xi=Q @ x + c, lam=lam)
    ref = build_reference(problem, state, beta, provenance="oracle-solved", tol=tol)
    logger.info(f"✅ QP reference certified (n={n}, l={l})")
    return ref


def _distances(trace: SolveTrace) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    dist = trace.column("dist_ref")
    if not np.any(np.isfinite(dist)):
        raise InsufficientTraceError("trace has no distance-to-reference values; rerun the solve with a reference")
    return trace.column("k"), trace.column("E_norm"), dist


def fit_linear_rate(
    trace: SolveTrace,
    reference: Optional[ReferenceSolution] = None,
    threshold: Optional[float] = None,
    min_points: int = 20,
    floor: float = 1e-14,
) -> RateFit:
    """
    Least-squares fit of log dist(w^k, w*) against k over the last half of the
    iterations with natural_norm below threshold (at least min_points of them).
    """
    k, e_norm, dist = _distances(trace)
    ok = np.isfinite(dist) & (dist > floor)
    if threshold is not None:
        ok &= e_norm < threshold
    idx = np.flatnonzero(ok)
    if idx.size < min_points:
        raise InsufficientTraceError(f"{idx.size} usable distances; at least {min_points} are needed")

    idx = idx[-max(min_points, idx.size // 2):]
    x, y = k[idx], np.log(dist[idx])
    if np.ptp(y) == 0.0:
        slope, intercept, r2 = 0.0, float(y[0]), 1.0
    else:
        fit = linregress(x, y)
        slope, intercept, r2 = float(fit.slope), float(fit.intercept), float(fit.rvalue ** 2)
    factor = math.exp(slope)
    return RateFit(
        factor=factor,
        slope=slope,
        intercept=intercept,
        r_squared=r2,
        window=(int(x[0]), int(x[-1])),
        points=int(idx.size),
        non_contractive=factor >= 1.0 - 1e-12,
    )


def error_bound_probe(trace: SolveTrace, reference: Optional[ReferenceSolution] = None,
                      tail_fraction: float = 0.5) -> ErrorBoundProbe:
    """
    tau_hat = max dist(w^k, w*) / natural_norm_k over the tail; a lower bound on
    any error-bound constant valid on the visited region. radius is the smallest
    natural_norm among the rows used.
    """
    _, e_norm, dist = _distances(trace)
    ok = np.isfinite(dist) & np.isfinite(e_norm) & (e_norm > 0)
    idx = np.flatnonzero(ok)
    if idx.size == 0:
        raise InsufficientTraceError("no iterations with a nonzero natural map; nothing to estimate")
    idx = idx[-max(1, int(math.ceil(tail_fraction * idx.size))):]
    ratios = dist[idx] / e_norm[idx]
    return ErrorBoundProbe(tau_hat=float(np.max(ratios)), radius=float(np.min(e_norm[idx])), points=int(idx.size))


def fejer_constant(beta: float, rho: float, norm_a: float, conservative: bool = False) -> float:
    """
    (2 - beta||A||)(1 - rho/2) by default. The conservative value
    rho(2 - rho)(2 - beta||A||)/4 follows from alpha > 1/2 and the lower
    phi bound alone.
    """
    if conservative:
        return rho * (2.0 - rho) * (2.0 - beta * norm_a) / 4.0
    return (2.0 - beta * norm_a) * (1.0 - rho / 2.0)


def fejer_check(
    trace: SolveTrace,
    reference: Optional[ReferenceSolution] = None,
    *,
    beta: float,
    rho: float,
    norm_a: float,
    c0: float = 0.0,
    constant: Optional[float] = None,
    slack: float = 1e-8,
) -> FejerReport:
    """Count iterations with dist^2_{k+1} > dist^2_k - C ||E_k||^2 + slack"""
    if constant is None:
        if c0 > 0:
            raise FejerRefusedError(
                "Fejér constant depends on the unknown error-bound constant when c0 > 0; pass constant explicitly"
            )
        constant = fejer_constant(beta, rho, norm_a)

    k, e_norm, dist = _distances(trace)
    checked, bad, worst = 0, [], -math.inf
    for i in range(len(dist) - 1):
        if not (np.isfinite(dist[i]) and np.isfinite(dist[i + 1]) and np.isfinite(e_norm[i])):
            continue
        margin = dist[i + 1] ** 2 - (dist[i] ** 2 - constant * e_norm[i] ** 2)
        checked += 1
        worst = max(worst, margin)
        if margin > slack:
            bad.append(int(k[i]))
    if checked == 0:
        raise InsufficientTraceError("no consecutive iterations with distances to check")
    if bad:
        logger.warning(f"⚠️ Fejér inequality violated at {len(bad)} of {checked} iterations")
    return FejerReport(
        constant=constant,
        checked=checked,
        violations=len(bad),
        fraction=len(bad) / checked,
        worst_margin=worst,
        violating_iterations=bad,
    )


def diagnose_trace(
    trace: SolveTrace,
    beta: Optional[float] = None,
    rho: float = 1.0,
    norm_a: Optional[float] = None,
    c0: float = 0.0,
    constant: Optional[float] = None,
) -> dict:
    """Run every trace check, keeping per-check failures in the report"""
    report: dict = {"records": len(trace)}
    checks = {
        "rate": lambda: fit_linear_rate(trace).model_dump(),
        "error_bound": lambda: error_bound_probe(trace).model_dump(),
    }
    if beta is not None and norm_a is not None:
        checks["fejer"] = lambda: fejer_check(trace, beta=beta, rho=rho, norm_a=norm_a, c0=c0,
                                              constant=constant).model_dump()
    for name, check in checks.items():
        try:
            report[name] = check()
        except SolverError as e:
            report[name] = {"error": type(e).__name__, "detail": e.detail}
    return report
