"""
Multi-block problem model:

    min  sum_i f_i(x_i)   s.t.  sum_i A_i x_i = b,  x_i in X_i

plus solver parameters, iterate state and the parameter-validity computations.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, computed_field, field_validator
from scipy.sparse.linalg import LinearOperator

from . import prox as px
from .config import get_settings
from .errors import DimensionError, InvalidModulusError

logger = logging.getLogger(__name__)

Matrix = Union[np.ndarray, LinearOperator]


# ---------------------------------------------------------------------------
# Blocks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BlockSpec:
    """One block f_i with its oracles. Vectors are flat; matrix blocks are stored row-major."""

    name: str
    dim: int
    prox: Callable[[np.ndarray, float], np.ndarray]
    subgradient: Callable[[np.ndarray], np.ndarray]
    objective: Callable[[np.ndarray], float]
    projection: Callable[[np.ndarray], np.ndarray]
    modulus: Optional[float]
    kind: str = "custom"
    smooth: bool = False
    # (Q, c) for blocks 0.5 x^T Q x + c^T x over all of space; a 1-D Q is a diagonal
    quadratic: Optional[Tuple[np.ndarray, np.ndarray]] = None


def _identity(x: np.ndarray) -> np.ndarray:
    return np.asarray(x, dtype=float).copy()


def _box(lower, upper) -> Callable[[np.ndarray], np.ndarray]:
    if lower is None and upper is None:
        return _identity
    return lambda x: px.project_box(x, lower, upper)


def smoothed_power_block(name: str, dim: int, reg: px.SmoothedPowerRegularizer) -> BlockSpec:
    return BlockSpec(
        name=name,
        dim=dim,
        prox=lambda z, beta: px.prox_smoothed_power(z, beta, reg),
        subgradient=lambda x: px.smoothed_power_grad(x, reg),
        objective=lambda x: px.smoothed_power_value(x, reg),
        projection=_identity,
        modulus=px.weak_convexity_modulus_smoothed(reg),
        kind="smoothed_power",
        smooth=True,
    )


def half_block(name: str, dim: int, weight: float = 1.0) -> BlockSpec:
    """Unsmoothed w * sum |x_i|^(1/2); not weakly convex, so its modulus is infinite"""
    return BlockSpec(
        name=name,
        dim=dim,
        prox=lambda z, beta: px.prox_half(z, beta, weight),
        subgradient=lambda x: px.half_subgrad(x, weight),
        objective=lambda x: px.half_value(x, weight),
        projection=_identity,
        modulus=math.inf,
        kind="half",
    )


def l1_block(name: str, dim: int, weight: float, lower=None, upper=None) -> BlockSpec:
    project = _box(lower, upper)
    return BlockSpec(
        name=name,
        dim=dim,
        prox=lambda z, beta: project(px.prox_l1(z, beta, weight)),
        subgradient=lambda x: weight * np.sign(np.asarray(x, dtype=float)),
        objective=lambda x: float(weight * np.sum(np.abs(x))),
        projection=project,
        modulus=0.0,
        kind="l1",
    )


def fidelity_block(name: str, fid: px.QuadraticFidelity, lower=None, upper=None) -> BlockSpec:
    project = _box(lower, upper)
    return BlockSpec(
        name=name,
        dim=fid.target.size,
        prox=lambda z, beta: project(px.prox_quadratic_fidelity(z, beta, fid)),
        subgradient=lambda y: (np.asarray(y, dtype=float) - fid.target) / fid.delta_fid,
        objective=lambda y: px.quadratic_fidelity_value(y, fid),
        projection=project,
        modulus=0.0,
        kind="quadratic_fidelity",
        quadratic=None if lower is not None or upper is not None else (
            np.full(fid.target.size, 1.0 / fid.delta_fid), -fid.target / fid.delta_fid),
        smooth=lower is None and upper is None,
    )


def quadratic_block(name: str, hessian, linear=None) -> BlockSpec:
    """0.5 x^T Q x + c^T x with dense symmetric positive semidefinite Q"""
    Q = np.atleast_2d(np.asarray(hessian, dtype=float))
    c = np.zeros(Q.shape[0]) if linear is None else np.asarray(linear, dtype=float).ravel()
    if Q.shape[0] != Q.shape[1] or c.size != Q.shape[0]:
        raise DimensionError(f"block '{name}': hessian {Q.shape} and linear term ({c.size},) disagree")
    eye = np.eye(Q.shape[0])

    def prox(z: np.ndarray, beta: float) -> np.ndarray:
        return np.linalg.solve(eye + beta * Q, np.asarray(z, dtype=float) - beta * c)

    return BlockSpec(
        name=name,
        dim=Q.shape[0],
        prox=prox,
        subgradient=lambda x: Q @ np.asarray(x, dtype=float) + c,
        objective=lambda x: float(0.5 * x @ Q @ x + c @ x),
        projection=_identity,
        modulus=0.0,
        kind="quadratic",
        quadratic=(Q, c),
        smooth=True,
    )


def diag_quadratic_block(name: str, diag, linear=None, lower=None, upper=None) -> BlockSpec:
    """Separable quadratic, optionally restricted to a box"""
    d = np.asarray(diag, dtype=float).ravel()
    c = np.zeros_like(d) if linear is None else np.asarray(linear, dtype=float).ravel()
    project = _box(lower, upper)
    return BlockSpec(
        name=name,
        dim=d.size,
        prox=lambda z, beta: project((np.asarray(z, dtype=float) - beta * c) / (1.0 + beta * d)),
        subgradient=lambda x: d * np.asarray(x, dtype=float) + c,
        objective=lambda x: float(0.5 * np.sum(d * x * x) + c @ x),
        projection=project,
        modulus=0.0,
        kind="diag_quadratic",
        quadratic=None if lower is not None or upper is not None else (d, c),
        smooth=lower is None and upper is None,
    )


def spectral_half_block(name: str, shape: Tuple[int, int], reg: px.SmoothedPowerRegularizer,
                        svd: px.SvdOracle = px.dense_svd) -> BlockSpec:
    rows, cols = shape
    return BlockSpec(
        name=name,
        dim=rows * cols,
        prox=lambda z, beta: px.prox_spectral_half(z.reshape(shape), beta, reg, svd).ravel(),
        subgradient=lambda x: px.spectral_half_grad(x.reshape(shape), reg, svd).ravel(),
        objective=lambda x: px.spectral_half_value(x.reshape(shape), reg),
        projection=_identity,
        modulus=px.weak_convexity_modulus_smoothed(reg),
        kind="spectral_half",
        smooth=True,
    )


def spectral_half_exact_block(name: str, shape: Tuple[int, int], weight: float = 1.0,
                              svd: px.SvdOracle = px.dense_svd) -> BlockSpec:
    return BlockSpec(
        name=name,
        dim=shape[0] * shape[1],
        prox=lambda z, beta: px.prox_spectral_half_exact(z.reshape(shape), beta, weight, svd).ravel(),
        subgradient=lambda x: px.spectral_half_exact_subgrad(x.reshape(shape), weight, svd).ravel(),
        objective=lambda x: px.spectral_half_exact_value(x.reshape(shape), weight),
        projection=_identity,
        modulus=math.inf,
        kind="spectral_half_exact",
    )


def nuclear_block(name: str, shape: Tuple[int, int], weight: float = 1.0,
                  svd: px.SvdOracle = px.dense_svd) -> BlockSpec:
    return BlockSpec(
        name=name,
        dim=shape[0] * shape[1],
        prox=lambda z, beta: px.prox_nuclear(z.reshape(shape), beta, weight, svd).ravel(),
        subgradient=lambda x: px.nuclear_subgrad(x.reshape(shape), weight, svd).ravel(),
        objective=lambda x: px.nuclear_value(x.reshape(shape), weight),
        projection=_identity,
        modulus=0.0,
        kind="nuclear",
    )


# ---------------------------------------------------------------------------
# Coupling
# ---------------------------------------------------------------------------

def _shape(M: Matrix) -> Tuple[int, int]:
    return tuple(int(s) for s in M.shape)


@dataclass(frozen=True)
class LinearCoupling:
    """A = [A_1 ... A_m], b. norm_estimate is an inflated upper estimate of ||A||_2."""

    matrices: Tuple[Matrix, ...]
    rhs: np.ndarray
    norm_estimate: float = 0.0

    @classmethod
    def build(
        cls,
        matrices: Sequence[Matrix],
        rhs=None,
        iterations: Optional[int] = None,
        seed: int = 0,
        safety: Optional[float] = None,
    ) -> "LinearCoupling":
        settings = get_settings()
        iterations = settings.power_iterations if iterations is None else iterations
        safety = settings.norm_safety if safety is None else safety
        mats = tuple(M if isinstance(M, LinearOperator) else np.atleast_2d(np.asarray(M, dtype=float))
                     for M in matrices)
        rows = {_shape(M)[0] for M in mats}
        if len(rows) > 1:
            raise DimensionError(f"coupling matrices disagree on row count: {sorted(rows)}")
        l = rows.pop() if rows else 0
        b = np.zeros(l) if rhs is None else np.asarray(rhs, dtype=float).ravel()
        if b.size != l:
            raise DimensionError(f"right-hand side has length {b.size}, coupling has {l} rows")
        coupling = cls(matrices=mats, rhs=b)
        sigma = spectral_norm_estimate(coupling, iterations, seed)
        return replace(coupling, norm_estimate=safety * sigma)

    @property
    def rows(self) -> int:
        return self.rhs.size

    @property
    def cols(self) -> Tuple[int, ...]:
        return tuple(_shape(M)[1] for M in self.matrices)

    @property
    def n(self) -> int:
        return sum(self.cols)

    def split(self, x: np.ndarray) -> List[np.ndarray]:
        return np.split(np.asarray(x, dtype=float), np.cumsum(self.cols)[:-1])

    def apply(self, x: np.ndarray) -> np.ndarray:
        """A x"""
        out = np.zeros(self.rows)
        for M, xi in zip(self.matrices, self.split(x)):
            out += M @ xi
        return out

    def apply_t(self, lam: np.ndarray) -> np.ndarray:
        """A^T lam, stacked"""
        lam = np.asarray(lam, dtype=float)
        parts = [M.rmatvec(lam) if isinstance(M, LinearOperator) else M.T @ lam for M in self.matrices]
        return np.concatenate([np.asarray(p, dtype=float).ravel() for p in parts]) if parts else np.zeros(0)

    def to_dense(self) -> np.ndarray:
        parts = [M if isinstance(M, np.ndarray) else M.matmat(np.eye(_shape(M)[1])) for M in self.matrices]
        return np.hstack(parts) if parts else np.zeros((self.rows, 0))


def spectral_norm_estimate(coupling: LinearCoupling, iterations: int = 100, seed: int = 0) -> float:
    """
    Power iteration on A^T A. Returns the running maximum of ||A x_k|| over unit
    x_k, so the estimate never decreases with more iterations.
    """
    if iterations < 1:
        raise ValueError("iterations must be at least 1")
    n = coupling.n
    if n == 0 or coupling.rows == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    x /= np.linalg.norm(x)
    best = 0.0
    for _ in range(iterations):
        ax = coupling.apply(x)
        best = max(best, float(np.linalg.norm(ax)))
        y = coupling.apply_t(ax)
        ny = np.linalg.norm(y)
        if ny == 0.0:
            break
        x = y / ny
    return best


# ---------------------------------------------------------------------------
# Problem instance
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProblemInstance:
    blocks: Tuple[BlockSpec, ...]
    coupling: LinearCoupling

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))

    @property
    def dims(self) -> Tuple[int, ...]:
        return tuple(b.dim for b in self.blocks)

    @property
    def n(self) -> int:
        return sum(self.dims)

    @property
    def l(self) -> int:
        return self.coupling.rows

    @property
    def norm_a(self) -> float:
        return self.coupling.norm_estimate

    @property
    def c0(self) -> float:
        moduli = [b.modulus for b in self.blocks if b.modulus is not None]
        return max(moduli, default=0.0)

    def split(self, x: np.ndarray) -> List[np.ndarray]:
        return np.split(np.asarray(x, dtype=float), np.cumsum(self.dims)[:-1])

    def objective(self, x: np.ndarray) -> float:
        return float(sum(b.objective(xi) for b, xi in zip(self.blocks, self.split(x))))

    def project(self, x: np.ndarray) -> np.ndarray:
        return np.concatenate([b.projection(xi) for b, xi in zip(self.blocks, self.split(x))])

    def subgradient(self, x: np.ndarray) -> np.ndarray:
        return np.concatenate([b.subgradient(xi) for b, xi in zip(self.blocks, self.split(x))])

    def infeasibility(self, x: np.ndarray) -> float:
        return float(np.linalg.norm(self.coupling.apply(x) - self.coupling.rhs))


# ---------------------------------------------------------------------------
# Parameters and state
# ---------------------------------------------------------------------------

class SolverParams(BaseModel):
    """
    beta and the tolerances may be left unset; resolve_params fills them in.
    beta and rho are deliberately unconstrained here so validate_problem can
    report bad values instead of failing at parse time.
    """

    beta: Optional[float] = None
    rho: float = 1.0
    max_iter: int = 5000
    tol_E: Optional[float] = None
    tol_p: Optional[float] = None
    tol_d: Optional[float] = None
    seed: int = 0
    parallel_blocks: int = 1
    strict: bool = False
    # None takes DDRSM_STALL_WINDOW; 0 turns stall detection off
    stall_window: Optional[int] = None

    @field_validator("max_iter", "parallel_blocks")
    @classmethod
    def validate_positive(cls, v: int) -> int:
        if v < 1:
            raise ValueError("must be a positive integer")
        return v

    @field_validator("stall_window")
    @classmethod
    def validate_window(cls, v: Optional[int]) -> Optional[int]:
        if v is not None and v < 0:
            raise ValueError("stall_window must be nonnegative")
        return v


@dataclass
class IterateState:
    x: np.ndarray
    xi: np.ndarray
    lam: np.ndarray
    k: int = 0

    def w(self, beta: float) -> np.ndarray:
        """(x + beta xi, lam)"""
        return np.concatenate([self.x + beta * self.xi, self.lam])

    @classmethod
    def from_w(cls, w: np.ndarray, x: np.ndarray, beta: float, k: int = 0) -> "IterateState":
        x = np.asarray(x, dtype=float)
        n = x.size
        return cls(x=x.copy(), xi=(w[:n] - x) / beta, lam=np.asarray(w[n:], dtype=float).copy(), k=k)

    def copy(self) -> "IterateState":
        return IterateState(self.x.copy(), self.xi.copy(), self.lam.copy(), self.k)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.xi)) and np.all(np.isfinite(self.lam)))


class ValidationReport(BaseModel):
    violations: List[str] = []
    warnings: List[str] = []
    norm_estimate: float = 0.0
    c0: float = 0.0
    beta: Optional[float] = None
    rho: float = 1.0

    @computed_field
    @property
    def runnable(self) -> bool:
        return not self.violations


@dataclass(frozen=True)
class BetaInterval:
    """Open interval (lower, upper)"""

    lower: float
    upper: float

    def __contains__(self, beta: float) -> bool:
        return self.lower < beta < self.upper


def admissible_beta_upper(c0: float, norm_a: float, tau: Optional[float] = 1.0) -> float:
    """min(1/(2 c0), 1/(||A|| + c0), 2/(||A|| + 2 c0 tau^2)); the last term is skipped when tau is None"""
    if c0 < 0:
        raise InvalidModulusError(f"weak convexity modulus must be nonnegative (got {c0})")
    bounds = [
        math.inf if c0 == 0 else 1.0 / (2.0 * c0),
        math.inf if norm_a + c0 == 0 else 1.0 / (norm_a + c0),
    ]
    if tau is not None:
        if tau <= 0:
            raise ValueError("tau_guess must be positive")
        denom = norm_a + 2.0 * c0 * tau * tau
        bounds.append(math.inf if denom == 0 else 2.0 / denom)
    return min(bounds)


def beta_admissible_range(instance: ProblemInstance, tau_guess: Optional[float] = 1.0) -> BetaInterval:
    return BetaInterval(0.0, admissible_beta_upper(instance.c0, instance.norm_a, tau_guess))


def validate_problem(instance: ProblemInstance, params: SolverParams) -> ValidationReport:
    """Collect every violated hypothesis; only malformed storage raises."""
    violations: List[str] = []
    warnings: List[str] = []

    for block in instance.blocks:
        if block.dim < 0:
            raise DimensionError(f"block '{block.name}' has negative dimension {block.dim}")

    coupling = instance.coupling
    if len(coupling.matrices) != len(instance.blocks):
        violations.append(
            f"dimension mismatch: {len(instance.blocks)} blocks but {len(coupling.matrices)} coupling matrices"
        )
    for i, (block, cols) in enumerate(zip(instance.blocks, coupling.cols)):
        if block.dim != cols:
            violations.append(
                f"dimension mismatch: block '{block.name}' has dimension {block.dim} but A_{i + 1} has {cols} columns"
            )

    for block in instance.blocks:
        if block.modulus is None:
            violations.append(f"weak convexity modulus unset for block '{block.name}'")
        elif block.modulus < 0:
            violations.append(f"weak convexity modulus of block '{block.name}' is negative")

    norm_a = instance.norm_a
    beta = params.beta
    if beta is not None:
        if beta <= 0:
            violations.append("β must be positive")
        elif beta * norm_a >= 1.0:
            violations.append(
                f"β exceeds 1/‖A‖: step-size bounds require 0 < β·‖A‖ < 1 (β = {beta:.6g}, ‖A‖ ≈ {norm_a:.6g})"
            )
        elif instance.c0 >= 0 and beta >= admissible_beta_upper(instance.c0, norm_a, None):
            warnings.append(
                f"β = {beta:.6g} lies outside the weakly convex convergence range "
                f"(0, {admissible_beta_upper(instance.c0, norm_a, None):.6g})"
            )

    if not 0.0 < params.rho < 2.0:
        violations.append(f"ρ must lie in (0,2) (got {params.rho})")

    return ValidationReport(
        violations=violations,
        warnings=warnings,
        norm_estimate=norm_a,
        c0=instance.c0 if all(b.modulus is not None for b in instance.blocks) else 0.0,
        beta=beta,
        rho=params.rho,
    )


def resolve_params(instance: ProblemInstance, params: SolverParams) -> SolverParams:
    """Fill unset beta and tolerances with their defaults, logging each one"""
    updates = {}
    if params.beta is None:
        upper = admissible_beta_upper(instance.c0, instance.norm_a, None)
        if upper <= 0.0:
            upper = 1.0 / instance.norm_a if instance.norm_a > 0 else math.inf
            logger.warning(f"⚠️ empty weakly convex β range (c0 = {instance.c0}); falling back to 1/‖A‖")
        beta = 0.9 * upper if math.isfinite(upper) else 1.0
        logger.info(f"🔧 β not set: using 0.9 × admissible endpoint = {beta:.6g} (error-bound term omitted)")
        updates["beta"] = beta
    if params.tol_E is None:
        updates["tol_E"] = 1e-6 * math.sqrt(instance.n + instance.l)
        logger.info(f"🔧 tol_E not set: using {updates['tol_E']:.3g}")
    if params.tol_p is None:
        updates["tol_p"] = 1e-8 * math.sqrt(instance.n)
    if params.tol_d is None:
        updates["tol_d"] = 1e-8 * math.sqrt(instance.n)
    return params.model_copy(update=updates)
