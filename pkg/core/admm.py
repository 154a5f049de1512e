"""
Two-block ADMM baseline for the compressed-sensing model

    min_x,y  w r(x) + ||y - v||^2 / (2 delta_fid)   s.t.  M x - y = 0

with a closed-form y-update and a proximal-linearized x-update.
"""

import logging
import time
from typing import TYPE_CHECKING, Literal, Optional

import numpy as np
from pydantic import BaseModel, field_validator

from . import prox as px
from .errors import DivergenceError
from .problem import IterateState, LinearCoupling
from .solver import Monitor, SolveResult, SolveStatus, SolveTrace, TraceRecord

if TYPE_CHECKING:
    from .benchmarks import CsInstance

logger = logging.getLogger(__name__)


class AdmmParams(BaseModel):
    beta: float = 1.0
    eta: Optional[float] = None
    tol_p: Optional[float] = None
    tol_d: Optional[float] = None
    max_iter: int = 5000
    order: Literal["y_first", "x_first"] = "y_first"
    strict: bool = False

    @field_validator("beta")
    @classmethod
    def validate_beta(cls, v: float) -> float:
        if v <= 0:
            raise ValueError("ADMM penalty must be positive")
        return v

    @field_validator("eta")
    @classmethod
    def validate_eta(cls, v: Optional[float]) -> Optional[float]:
        if v is not None and v <= 0:
            raise ValueError("linearization step must be positive")
        return v


def _cs_objective(x: np.ndarray, y: np.ndarray, reg: px.SmoothedPowerRegularizer, fid: px.QuadraticFidelity) -> float:
    return px.smoothed_power_value(x, reg) + px.quadratic_fidelity_value(y, fid)


def admm_solve_cs(
    instance: "CsInstance",
    reg: px.SmoothedPowerRegularizer,
    params: AdmmParams,
    init: Optional[IterateState] = None,
    monitor: Optional[Monitor] = None,
) -> SolveResult:
    """
    The returned state stacks (x, y) and carries the prox-implied subgradients,
    so it can be certified against the equivalent two-block DDRSM problem with
    coupling [M, -I] and b = 0.
    """
    M = instance.M
    m, n = M.shape
    fid = px.QuadraticFidelity(target=instance.v, delta_fid=instance.delta_fid)
    beta = params.beta

    norm_m = LinearCoupling.build([M]).norm_estimate
    eta = params.eta if params.eta is not None else (0.99 / (beta * norm_m ** 2) if norm_m > 0 else 1.0)
    if norm_m > 0 and eta > 1.0 / (beta * norm_m ** 2):
        logger.warning(f"⚠️ η = {eta:.4g} exceeds 1/(β‖M‖²) = {1.0 / (beta * norm_m ** 2):.4g}")
    tol_p = params.tol_p if params.tol_p is not None else 1e-8 * np.sqrt(n)
    tol_d = params.tol_d if params.tol_d is not None else 1e-8 * np.sqrt(n)
    resolved = params.model_copy(update={"eta": eta, "tol_p": tol_p, "tol_d": tol_d})

    if init is None:
        x, y, lam = np.zeros(n), np.zeros(m), np.zeros(m)
    else:
        x, y, lam = init.x[:n].copy(), init.x[n:].copy(), init.lam.copy()
    xi_x = px.smoothed_power_grad(x, reg)

    def state(k: int) -> IterateState:
        return IterateState(
            x=np.concatenate([x, y]),
            xi=np.concatenate([xi_x, (y - fid.target) / fid.delta_fid]),
            lam=lam.copy(),
            k=k,
        )

    def update_y():
        return (fid.target / fid.delta_fid - lam + beta * (M @ x)) / (1.0 / fid.delta_fid + beta)

    def update_x():
        arg = x - eta * (beta * (M.T @ (M @ x - y)) - M.T @ lam)
        x_new = px.prox_smoothed_power(arg, eta, reg)
        return x_new, (arg - x_new) / eta

    trace = SolveTrace()
    t0 = time.perf_counter()

    def record(k: int, extra: dict) -> None:
        s = state(k)
        rec = TraceRecord(
            k=k,
            E_norm=float("nan"),
            objective=_cs_objective(x, y, reg, fid),
            infeas=float(np.linalg.norm(M @ x - y)),
            time_ms=1000.0 * (time.perf_counter() - t0),
            extra=dict(extra),
        )
        if monitor is not None:
            rec.extra.update({key: float(v) for key, v in monitor(s).items()})
        trace.append(rec)

    logger.info(f"🔄 ADMM: m={m}, n={n}, β={beta:.4g}, η={eta:.4g}, order={params.order}")
    status = SolveStatus.MAX_ITER
    record(0, {"step_u": float("nan"), "step_lam": float("nan")})
    k = 0
    while k < params.max_iter:
        x_old, y_old, lam_old = x, y, lam
        if params.order == "y_first":
            y = update_y()
            x, xi_x = update_x()
        else:
            x, xi_x = update_x()
            y = update_y()
        lam = lam - beta * (M @ x - y)
        k += 1

        step_u = float(np.sqrt(np.sum((x - x_old) ** 2) + np.sum((y - y_old) ** 2)))
        step_lam = float(np.linalg.norm(lam - lam_old))
        record(k, {"step_u": step_u, "step_lam": step_lam})

        if not (np.isfinite(step_u) and np.isfinite(step_lam)):
            status = SolveStatus.DIVERGED
            break
        if step_u <= tol_p and step_lam <= tol_d:
            status = SolveStatus.CONVERGED
            break

    elapsed = time.perf_counter() - t0
    if status == SolveStatus.DIVERGED:
        logger.error(f"❌ ADMM diverged at k={k}")
        if params.strict:
            raise DivergenceError(f"ADMM produced a non-finite iterate at k={k}")
    elif status == SolveStatus.CONVERGED:
        logger.info(f"✅ ADMM converged in {k} iterations")
    else:
        logger.warning(f"⚠️ ADMM hit max_iter={params.max_iter}")

    return SolveResult(state=state(k), status=status, trace=trace, params=resolved, elapsed_s=elapsed)
