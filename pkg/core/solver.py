"""
Distributed Douglas-Rachford splitting (DDRSM) loop.

One iteration, given the residual bundle at (x, xi, lam):

    z_i      = x_i + beta xi_i - rho alpha ebar_i
    x_i+     = prox_{beta f_i}(z_i)                 (blocks are independent)
    xi_i+    = (z_i - x_i+) / beta                   (a subgradient at x_i+)
    lam+     = lam - rho alpha (e_lam - beta A ebar)

which is w+ = w - rho alpha d for w = (x + beta xi, lam).
"""

import logging
import math
import time
from collections import deque
from concurrent.futures import Executor, ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Callable, Deque, Dict, List, Mapping, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel

from .config import get_settings
from .errors import DivergenceError, InitializationError, InsufficientTraceError, ValidationFailed
from .problem import IterateState, ProblemInstance, SolverParams, resolve_params, validate_problem
from .residuals import ResidualBundle, StepSizeBundle, natural_map, step_size

if TYPE_CHECKING:
    from .diagnostics import ReferenceSolution

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ["k", "E_norm", "phi", "psi", "alpha", "objective", "infeas", "time_ms", "dist_ref"]
TIME_COLUMNS = ("time_ms",)

Monitor = Callable[[IterateState], Mapping[str, float]]


class SolveStatus(str, Enum):
    CONVERGED = "converged"
    MAX_ITER = "max_iter"
    STALLED = "stalled"
    DIVERGED = "diverged"


@dataclass
class TraceRecord:
    k: int
    E_norm: float
    phi: float = float("nan")
    psi: float = float("nan")
    alpha: float = float("nan")
    objective: float = float("nan")
    infeas: float = float("nan")
    time_ms: float = float("nan")
    dist_ref: float = float("nan")
    extra: Dict[str, float] = field(default_factory=dict)

    def as_row(self) -> dict:
        row = {c: getattr(self, c) for c in TRACE_COLUMNS}
        row.update(self.extra)
        return row


@dataclass
class SolveTrace:
    records: List[TraceRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def append(self, record: TraceRecord) -> None:
        self.records.append(record)

    @property
    def extra_columns(self) -> List[str]:
        seen: Dict[str, None] = {}
        for r in self.records:
            for key in r.extra:
                seen.setdefault(key, None)
        return list(seen)

    def column(self, name: str) -> np.ndarray:
        if name in TRACE_COLUMNS:
            return np.array([getattr(r, name) for r in self.records], dtype=float)
        return np.array([r.extra.get(name, np.nan) for r in self.records], dtype=float)

    def to_frame(self, record_timings: bool = True) -> pd.DataFrame:
        columns = TRACE_COLUMNS + self.extra_columns
        df = pd.DataFrame([r.as_row() for r in self.records], columns=columns)
        df["k"] = df["k"].astype(int)
        if not record_timings:
            for c in TIME_COLUMNS:
                df[c] = np.nan
        return df

    @classmethod
    def from_frame(cls, df: pd.DataFrame) -> "SolveTrace":
        missing = [c for c in ("k", "E_norm") if c not in df.columns]
        if missing:
            raise InsufficientTraceError(f"trace lacks column(s) {missing}")
        extras = [c for c in df.columns if c not in TRACE_COLUMNS]
        trace = cls()
        for row in df.to_dict(orient="records"):
            trace.append(TraceRecord(
                k=int(row["k"]),
                **{c: float(row.get(c, np.nan)) for c in TRACE_COLUMNS[1:]},
                extra={c: float(row[c]) for c in extras},
            ))
        return trace


@dataclass
class SolveResult:
    state: IterateState
    status: SolveStatus
    trace: SolveTrace
    params: BaseModel
    bound_violations: int = 0
    elapsed_s: float = 0.0

    @property
    def iterations(self) -> int:
        return self.state.k

    @property
    def converged(self) -> bool:
        return self.status == SolveStatus.CONVERGED


def default_init(problem: ProblemInstance) -> IterateState:
    """x = 0, lam = 0 and xi the canonical subgradient at 0"""
    x = np.zeros(problem.n)
    xi = problem.subgradient(x)
    if not np.all(np.isfinite(xi)):
        bad = [b.name for b, g in zip(problem.blocks, problem.split(xi)) if not np.all(np.isfinite(g))]
        raise InitializationError(f"subgradient undefined at 0 for block(s) {bad}; supply an initial point")
    return IterateState(x=x, xi=xi, lam=np.zeros(problem.l), k=0)


def _block_update(args) -> Tuple[np.ndarray, np.ndarray]:
    block, z, beta = args
    x_new = np.asarray(block.prox(z, beta), dtype=float)
    return x_new, (z - x_new) / beta


def ddrsm_iterate(
    state: IterateState,
    problem: ProblemInstance,
    params: SolverParams,
    bundle: Optional[ResidualBundle] = None,
    steps: Optional[StepSizeBundle] = None,
    executor: Optional[Executor] = None,
) -> Tuple[IterateState, ResidualBundle, StepSizeBundle]:
    """One DDRSM step. Returns the new state with the bundle and step size it was taken with."""
    if params.beta is None:
        params = resolve_params(problem, params)
    beta, rho = params.beta, params.rho
    coupling = problem.coupling

    if bundle is None:
        bundle = natural_map(state, problem, beta)
    if steps is None:
        steps = step_size(bundle, beta, coupling)
    t = rho * steps.alpha

    z = state.x + beta * state.xi - t * bundle.ebar_x
    jobs = list(zip(problem.blocks, problem.split(z), [beta] * len(problem.blocks)))
    if executor is not None:
        parts = list(executor.map(_block_update, jobs))
    else:
        parts = [_block_update(j) for j in jobs]

    a_ebar = bundle.a_ebar if bundle.a_ebar is not None else coupling.apply(bundle.ebar_x)
    new_state = IterateState(
        x=np.concatenate([p[0] for p in parts]) if parts else np.zeros(0),
        xi=np.concatenate([p[1] for p in parts]) if parts else np.zeros(0),
        lam=state.lam - t * (bundle.e_lam - beta * a_ebar),
        k=state.k + 1,
    )
    return new_state, bundle, steps


def ddrsm_solve(
    problem: ProblemInstance,
    params: SolverParams,
    init: Optional[IterateState] = None,
    reference: Optional["ReferenceSolution"] = None,
    monitor: Optional[Monitor] = None,
) -> SolveResult:
    """Run DDRSM until the natural map, the step criterion or the iteration budget stops it"""
    settings = get_settings()
    params = resolve_params(problem, params)
    report = validate_problem(problem, params)
    if not report.runnable:
        raise ValidationFailed(report.violations)
    for warning in report.warnings:
        logger.warning(f"⚠️ {warning}")

    beta = params.beta
    state = default_init(problem) if init is None else init.copy()
    state.k = 0
    w_ref = reference.w(beta) if reference is not None else None

    trace = SolveTrace()
    t0 = time.perf_counter()

    def record(s: IterateState, b: ResidualBundle, st: Optional[StepSizeBundle] = None) -> None:
        rec = TraceRecord(
            k=s.k,
            E_norm=b.natural_norm,
            objective=problem.objective(s.x),
            infeas=problem.infeasibility(s.x),
            time_ms=1000.0 * (time.perf_counter() - t0),
        )
        if st is not None:
            rec.phi, rec.psi, rec.alpha = st.phi, st.psi, st.alpha
        if w_ref is not None:
            rec.dist_ref = float(np.linalg.norm(s.w(beta) - w_ref))
        if monitor is not None:
            rec.extra = {k: float(v) for k, v in monitor(s).items()}
        trace.append(rec)

    executor = ThreadPoolExecutor(max_workers=params.parallel_blocks) if params.parallel_blocks > 1 else None
    bound_violations = 0
    window = settings.stall_window if params.stall_window is None else params.stall_window
    history: Deque[float] = deque(maxlen=max(window, 1) + 1)
    status = SolveStatus.MAX_ITER

    logger.info(f"🔄 DDRSM: n={problem.n}, l={problem.l}, β={beta:.6g}, ρ={params.rho}, max_iter={params.max_iter}")
    try:
        bundle = natural_map(state, problem, beta)
        history.append(bundle.natural_norm)
        while True:
            if not np.isfinite(bundle.natural_norm):
                status = SolveStatus.DIVERGED
                record(state, bundle)
                break
            if bundle.natural_norm <= params.tol_E:
                status = SolveStatus.CONVERGED
                record(state, bundle)
                break
            if state.k >= params.max_iter:
                status = SolveStatus.MAX_ITER
                record(state, bundle)
                break

            steps = step_size(bundle, beta, problem.coupling)
            broken = steps.violations(settings.bound_tolerance)
            if broken:
                bound_violations += 1
                logger.warning(f"⚠️ step-size bound violated at k={state.k}: {'; '.join(broken)}")
            record(state, bundle, steps)

            new_state, _, _ = ddrsm_iterate(state, problem, params, bundle, steps, executor)
            if not new_state.is_finite():
                status = SolveStatus.DIVERGED
                state = new_state
                bundle = natural_map(state, problem, beta)
                record(state, bundle)
                break
            new_bundle = natural_map(new_state, problem, beta)

            step_x = np.linalg.norm(new_state.x - state.x)
            step_lam = np.linalg.norm(new_state.lam - state.lam)
            state, bundle = new_state, new_bundle
            if step_x <= params.tol_p and step_lam <= params.tol_d:
                status = SolveStatus.CONVERGED if bundle.natural_norm <= params.tol_E else SolveStatus.STALLED
                record(state, bundle)
                break

            # stalled: no relative decrease against the norm `window` iterations back
            history.append(bundle.natural_norm)
            lagged = history[0] if len(history) > window else math.inf
            if window > 0 and bundle.natural_norm >= lagged * (1.0 - settings.stall_rtol):
                status = SolveStatus.STALLED
                record(state, bundle)
                break
    finally:
        if executor is not None:
            executor.shutdown()

    elapsed = time.perf_counter() - t0
    if status == SolveStatus.DIVERGED:
        logger.error(f"❌ DDRSM diverged at k={state.k}")
        if params.strict:
            raise DivergenceError(f"non-finite iterate at k={state.k}")
    elif status == SolveStatus.CONVERGED:
        logger.info(f"✅ DDRSM converged in {state.k} iterations (‖E‖ = {bundle.natural_norm:.3e})")
    else:
        logger.warning(f"⚠️ DDRSM stopped with status {status.value} at k={state.k} (‖E‖ = {bundle.natural_norm:.3e})")

    return SolveResult(
        state=state,
        status=status,
        trace=trace,
        params=params,
        bound_violations=bound_violations,
        elapsed_s=elapsed,
    )
