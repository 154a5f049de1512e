"""
Benchmark instances and experiment harnesses: compressed sensing (DDRSM vs ADMM)
and synthetic low-rank plus sparse decomposition.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import scipy.linalg
from scipy.sparse.linalg import LinearOperator

from models.schemas import SCHEMA_VERSION, CompareConfig, CsBenchConfig, RpcaBenchConfig

from . import prox as px
from .admm import AdmmParams, admm_solve_cs
from .errors import ConfigError, SolverError, UndefinedPeakError
from .problem import (
    LinearCoupling,
    ProblemInstance,
    SolverParams,
    admissible_beta_upper,
    fidelity_block,
    half_block,
    l1_block,
    nuclear_block,
    smoothed_power_block,
    spectral_half_block,
    spectral_half_exact_block,
)
from .solver import SolveResult, SolveStatus, SolveTrace, ddrsm_solve

logger = logging.getLogger(__name__)

TIME_COLUMNS = ("time_s", "time_to_target_s", "time_ms")


def _count(fraction: float, total: int) -> int:
    """ceil(fraction * total) without floating-point overshoot"""
    return int(math.ceil(round(fraction * total, 9)))


def _scaled_identity(n: int, scale: float = 1.0) -> LinearOperator:
    return LinearOperator((n, n), matvec=lambda v: scale * np.ravel(v), rmatvec=lambda v: scale * np.ravel(v),
                          dtype=float)


def _readonly(*arrays: np.ndarray) -> None:
    for a in arrays:
        a.setflags(write=False)


# ---------------------------------------------------------------------------
# Compressed sensing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CsInstance:
    M: np.ndarray
    v: np.ndarray
    x_truth: np.ndarray
    noise_var: float
    delta_fid: float
    seed: int
    matrix: str = "gaussian"

    @property
    def shape(self) -> Tuple[int, int]:
        return self.M.shape


def generate_cs_instance(
    m_rows: int,
    n: int,
    sparsity: float,
    noise_var: float = 0.01,
    delta_fid: float = 1.0,
    seed: int = 0,
    normalize: bool = True,
    matrix: str = "gaussian",
) -> CsInstance:
    """
    x_truth has ceil(sparsity n) entries uniform on [0, 1] at random positions.
    M is i.i.d. Gaussian (or Bernoulli-sparse with unit-variance entries),
    scaled by 1/sqrt(m_rows) when normalize is set. v = M x_truth + N(0, noise_var).
    """
    if not 0.0 <= sparsity < 1.0:
        raise ConfigError("sparsity must lie in [0, 1)")
    rng = np.random.default_rng(seed)

    k = _count(sparsity, n)
    x_truth = np.zeros(n)
    support = rng.choice(n, size=k, replace=False)
    x_truth[support] = rng.uniform(0.0, 1.0, size=k)

    if matrix == "gaussian":
        M = rng.standard_normal((m_rows, n))
    elif matrix == "bernoulli":
        density = 0.1
        mask = rng.random((m_rows, n)) < density
        M = np.where(mask, rng.choice([-1.0, 1.0], size=(m_rows, n)), 0.0) / math.sqrt(density)
    else:
        raise ConfigError(f"unknown measurement matrix '{matrix}'")
    if normalize:
        M /= math.sqrt(m_rows)

    noise = rng.normal(0.0, math.sqrt(noise_var), size=m_rows) if noise_var > 0 else np.zeros(m_rows)
    v = M @ x_truth + noise
    _readonly(M, v, x_truth)
    return CsInstance(M=M, v=v, x_truth=x_truth, noise_var=noise_var, delta_fid=delta_fid, seed=seed, matrix=matrix)


def measurement_norm(instance: CsInstance) -> float:
    """Power-iteration estimate of ||M|| without the safety factor"""
    return LinearCoupling.build([instance.M], safety=1.0).norm_estimate


def cs_coupling(instance: CsInstance, row_scale: float = 1.0, fidelity_scale: float = 1.0) -> LinearCoupling:
    """s [M, -t I] with b = 0; the second block carries y / t"""
    m = instance.M.shape[0]
    return LinearCoupling.build(
        [row_scale * instance.M, _scaled_identity(m, -row_scale * fidelity_scale)],
        rhs=np.zeros(m),
    )


def cs_problem(instance: CsInstance, reg: px.SmoothedPowerRegularizer, coupling: Optional[LinearCoupling] = None,
               row_scale: float = 1.0, fidelity_scale: float = 1.0) -> ProblemInstance:
    """
    min w r(x) + ||t u - v||^2 / (2 delta)  s.t.  s (M x - t u) = 0.

    Same minimizers in x as the unscaled model with y = t u; s and t only
    change how the constraint and the fidelity are conditioned.
    """
    t = fidelity_scale
    fid = px.QuadraticFidelity(target=instance.v / t, delta_fid=instance.delta_fid / (t * t))
    return ProblemInstance(
        blocks=(smoothed_power_block("x", instance.M.shape[1], reg), fidelity_block("y", fid)),
        coupling=coupling if coupling is not None else cs_coupling(instance, row_scale, fidelity_scale),
    )


def psnr(x_star: np.ndarray, x_truth: np.ndarray) -> float:
    """10 log10(peak^2 / MSE) with peak = max |x_truth|; +inf when the reconstruction is exact"""
    x_truth = np.asarray(x_truth, dtype=float)
    peak = float(np.max(np.abs(x_truth))) if x_truth.size else 0.0
    if peak == 0.0:
        raise UndefinedPeakError("PSNR is undefined for an all-zero ground truth")
    mse = float(np.mean((np.asarray(x_star, dtype=float) - x_truth) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _recovery_psnr(x_star: np.ndarray, x_truth: np.ndarray) -> float:
    if not np.any(x_truth):
        return math.inf if np.max(np.abs(x_star), initial=0.0) <= 1e-8 else math.nan
    return psnr(x_star, x_truth)


def time_to_target(trace: SolveTrace, target: float = 60.0, column: str = "psnr") -> float:
    """Seconds until `column` first reaches target; nan if it never does"""
    values = trace.column(column)
    times = trace.column("time_ms")
    hit = np.flatnonzero(values >= target)
    return float(times[hit[0]]) / 1000.0 if hit.size else math.nan


@dataclass
class BenchReport:
    kind: str
    rows: List[dict] = field(default_factory=list)
    traces: Dict[str, SolveTrace] = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    schema_version: str = SCHEMA_VERSION

    def to_frame(self, record_timings: bool = True) -> pd.DataFrame:
        df = pd.DataFrame(self.rows)
        if not record_timings:
            for c in TIME_COLUMNS:
                if c in df.columns:
                    df[c] = np.nan
        return df

    @property
    def failed(self) -> List[dict]:
        return [r for r in self.rows if r.get("failed")]


PSNR_BAND = 0.1


def select_run(runs: List[tuple]) -> tuple:
    """
    Converged runs first; among those, any within PSNR_BAND dB of the best
    PSNR counts as a tie and the fewest iterations wins.
    """
    pool = [r for r in runs if r[0].converged] or runs
    scored = [(r, -math.inf if math.isnan(r[1]) else r[1]) for r in pool]
    best = max(s for _, s in scored)
    close = [(r, s) for r, s in scored if s >= best - PSNR_BAND]
    return min(close, key=lambda rs: (rs[0][0].iterations, -rs[1]))[0]


def _cs_candidates(config: CsBenchConfig, solver: str, rng: Optional[np.random.Generator] = None,
                   around: Optional[dict] = None) -> List[dict]:
    if around is not None:
        out = []
        for _ in range(config.refine):
            c = dict(around)
            if solver == "ddrsm":
                c["beta_fraction"] = float(min(c["beta_fraction"] * rng.uniform(0.8, 1.2), 0.99))
                c["rho"] = float(np.clip(c["rho"] * rng.uniform(0.8, 1.2), 0.05, 1.95))
            else:
                c["beta"] = float(c["beta"] * rng.uniform(0.5, 2.0))
            c["delta_fid"] = float(c["delta_fid"] * rng.uniform(0.5, 2.0))
            out.append(c)
        return out
    if solver == "ddrsm":
        g = config.ddrsm
        return [
            {"beta_fraction": b, "rho": r, "delta_fid": d, "row_scale": s, "fidelity_scale": t}
            for s in g.row_scale
            for t in g.fidelity_scale
            for d in g.delta_fid
            for b in g.beta_fractions
            for r in g.rho
        ]
    g = config.admm
    return [{"beta": b, "delta_fid": d} for d in g.delta_fid for b in g.beta]


def _fidelity_scale(relative: Optional[float], norm_m: float) -> float:
    return 1.0 if relative is None else relative * norm_m


def _run_cs_candidate(instance: CsInstance, config: CsBenchConfig, solver: str, candidate: dict,
                      coupling: Optional[LinearCoupling] = None,
                      norm_m: float = 1.0) -> Tuple[SolveResult, float, dict]:
    inst = replace(instance, delta_fid=candidate["delta_fid"])
    n = inst.M.shape[1]
    truth = inst.x_truth
    monitor = (lambda s: {"psnr": _recovery_psnr(s.x[:n], truth)}) if np.any(truth) else None
    reg = config.regularizer

    if solver == "ddrsm":
        s = candidate.get("row_scale", 1.0)
        t = _fidelity_scale(candidate.get("fidelity_scale"), norm_m)
        problem = cs_problem(inst, reg, coupling, row_scale=s, fidelity_scale=t)
        upper = admissible_beta_upper(problem.c0, problem.norm_a, None)
        params = SolverParams(
            beta=candidate["beta_fraction"] * upper,
            rho=candidate["rho"],
            max_iter=config.max_iter,
            tol_E=config.tol_E,
            tol_p=config.tol_p,
            tol_d=config.tol_d,
        )
        result = ddrsm_solve(problem, params, monitor=monitor)
        used = {"beta": params.beta, "rho": params.rho, "delta_fid": inst.delta_fid, "row_scale": s, "fidelity_scale": t}
    else:
        params = AdmmParams(beta=candidate["beta"], max_iter=config.max_iter, tol_p=config.tol_p, tol_d=config.tol_d)
        result = admm_solve_cs(inst, reg, params, monitor=monitor)
        used = {"beta": params.beta, "rho": math.nan, "delta_fid": inst.delta_fid, "row_scale": math.nan,
                "fidelity_scale": math.nan}
    return result, _recovery_psnr(result.state.x[:n], truth), used


def _run_cs_task(task: tuple) -> Tuple[dict, Optional[SolveTrace]]:
    config, cell_index, cell, seed, solver = task
    row = {
        "cell": cell_index,
        "m_rows": cell.m_rows,
        "n": cell.n,
        "sparsity": cell.sparsity,
        "seed": seed,
        "solver": solver,
    }
    try:
        instance = generate_cs_instance(cell.m_rows, cell.n, cell.sparsity, config.noise_var, 1.0, seed,
                                        normalize=config.normalize, matrix=config.matrix)
        norm_m = measurement_norm(instance) if solver == "ddrsm" else 1.0
        couplings: Dict[Tuple[float, float], LinearCoupling] = {}

        def coupling_for(candidate: dict) -> Optional[LinearCoupling]:
            if solver != "ddrsm":
                return None
            key = (candidate["row_scale"], _fidelity_scale(candidate["fidelity_scale"], norm_m))
            if key not in couplings:
                couplings[key] = cs_coupling(instance, *key)
            return couplings[key]

        def run_all(candidates):
            out = []
            for c in candidates:
                try:
                    res, score, used = _run_cs_candidate(instance, config, solver, c, coupling_for(c), norm_m)
                except SolverError as e:
                    logger.warning(f"⚠️ {solver} candidate {c} failed: {e.detail}")
                    continue
                if res.status != SolveStatus.DIVERGED:
                    out.append((res, score, used, c))
            return out

        runs = run_all(_cs_candidates(config, solver))
        if runs and config.refine > 0:
            best = select_run(runs)
            rng = np.random.default_rng([config.refine_seed, cell_index, seed])
            runs += run_all(_cs_candidates(config, solver, rng, around=best[3]))
        if not runs:
            raise SolverError(f"every {solver} candidate diverged or failed")

        result, score, used, _ = select_run(runs)
        last = result.trace.records[-1]
        row.update({
            "status": result.status.value,
            "iterations": result.iterations,
            "psnr": score,
            "time_s": result.elapsed_s,
            "time_to_target_s": time_to_target(result.trace, config.psnr_target) if np.any(instance.x_truth) else math.nan,
            "objective": last.objective,
            "infeas": last.infeas,
            "bound_violations": result.bound_violations,
            "candidates": len(runs),
            **used,
            "failed": False,
            "error": "",
        })
        logger.info(f"✅ cell {cell_index} seed {seed} {solver}: {result.iterations} iterations, PSNR {score:.2f}")
        return row, result.trace
    except (SolverError, np.linalg.LinAlgError) as e:
        detail = e.detail if isinstance(e, SolverError) else str(e)
        logger.error(f"❌ cell {cell_index} seed {seed} {solver} failed: {detail}")
        row.update({"status": "failed", "failed": True, "error": detail})
        return row, None


def run_cs_benchmark(config: CsBenchConfig, jobs: int = 1) -> BenchReport:
    """DDRSM vs ADMM over every (cell, seed); each solver is tuned on its grid before reporting"""
    tasks = [
        (config, i, cell, seed, solver)
        for i, cell in enumerate(config.cells)
        for seed in config.seeds
        for solver in config.solvers
    ]
    logger.info(f"🔄 compressed sensing benchmark: {len(tasks)} runs on {jobs} worker(s)")
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        outcomes = list(pool.map(_run_cs_task, tasks))

    report = BenchReport(kind="cs", config=config.model_dump(mode="json"))
    for (_, i, _, seed, solver), (row, trace) in zip(tasks, outcomes):
        report.rows.append(row)
        if trace is not None:
            report.traces[f"cell{i}_seed{seed}_{solver}"] = trace
    return report


def run_compare(config: CompareConfig) -> BenchReport:
    """
    DDRSM and ADMM once each on the same instance with the given parameters.
    Invalid DDRSM parameters raise ValidationFailed instead of becoming a failed row.
    """
    cell = config.cell
    instance = generate_cs_instance(cell.m_rows, cell.n, cell.sparsity, config.noise_var, config.delta_fid,
                                    config.seed, normalize=config.normalize, matrix=config.matrix)
    n = cell.n
    truth = instance.x_truth
    monitor = (lambda s: {"psnr": _recovery_psnr(s.x[:n], truth)}) if np.any(truth) else None
    has_target = bool(np.any(truth))

    t = 1.0 if config.fidelity_scale is None else config.fidelity_scale * measurement_norm(instance)
    problem = cs_problem(instance, config.regularizer, row_scale=config.row_scale, fidelity_scale=t)
    ddrsm = ddrsm_solve(problem, config.ddrsm, monitor=monitor)
    admm = admm_solve_cs(instance, config.regularizer, config.admm, monitor=monitor)

    report = BenchReport(kind="compare", config=config.model_dump(mode="json"))
    for name, result in (("ddrsm", ddrsm), ("admm", admm)):
        last = result.trace.records[-1]
        report.rows.append({
            "solver": name,
            "status": result.status.value,
            "iterations": result.iterations,
            "psnr": _recovery_psnr(result.state.x[:n], truth),
            "time_s": result.elapsed_s,
            "time_to_target_s": time_to_target(result.trace, config.psnr_target) if has_target else math.nan,
            "objective": last.objective,
            "infeas": last.infeas,
            "beta": result.params.beta,
            "bound_violations": result.bound_violations,
            "failed": result.status == SolveStatus.DIVERGED,
        })
        report.traces[name] = result.trace
    return report


# ---------------------------------------------------------------------------
# Low-rank plus sparse decomposition
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RpcaInstance:
    D: np.ndarray
    L: np.ndarray
    S: np.ndarray
    rank: int
    weight: float
    seed: int

    @property
    def shape(self) -> Tuple[int, int]:
        return self.D.shape


def generate_rpca_instance(
    rows: int,
    cols: int,
    rank: int,
    corruption: float,
    magnitude: float = 1.0,
    seed: int = 0,
    weight: Optional[float] = None,
) -> RpcaInstance:
    """L = P Q^T with both factors scaled to unit spectral norm; S has ceil(corruption rows cols) entries of +-magnitude"""
    if not 0 <= rank <= min(rows, cols):
        raise ConfigError("rank must lie in [0, min(rows, cols)]")
    if not 0.0 <= corruption < 1.0:
        raise ConfigError("corruption must lie in [0, 1)")
    rng = np.random.default_rng(seed)

    if rank > 0:
        P = rng.standard_normal((rows, rank))
        Q = rng.standard_normal((cols, rank))
        P /= scipy.linalg.norm(P, 2)
        Q /= scipy.linalg.norm(Q, 2)
        L = P @ Q.T
    else:
        L = np.zeros((rows, cols))

    S = np.zeros((rows, cols))
    count = _count(corruption, rows * cols)
    positions = rng.choice(rows * cols, size=count, replace=False)
    S.flat[positions] = magnitude * rng.choice([-1.0, 1.0], size=count)

    D = L + S
    _readonly(D, L, S)
    w = 1.0 / math.sqrt(max(rows, cols)) if weight is None else weight
    return RpcaInstance(D=D, L=L, S=S, rank=rank, weight=w, seed=seed)


def rpca_problem(instance: RpcaInstance, model: str = "nonconvex", epsilon: float = 5e-3,
                 coupling_scale: float = 1.0) -> ProblemInstance:
    """
    min g(A) + w h(E)  s.t.  s (A + E) = s D, with (g, h) one of
    convex: nuclear and l1; nonconvex: singular-value and entrywise half
    quasi-norms smoothed with radius epsilon (finite c0); exact: the
    unsmoothed quasi-norms (c0 = inf, no admissible beta).
    """
    shape = instance.shape
    size = shape[0] * shape[1]
    w = instance.weight
    if model == "convex":
        blocks = (nuclear_block("A", shape, 1.0), l1_block("E", size, w))
    elif model == "nonconvex":
        blocks = (
            spectral_half_block("A", shape, px.SmoothedPowerRegularizer(q=0.5, epsilon=epsilon, weight=1.0)),
            smoothed_power_block("E", size, px.SmoothedPowerRegularizer(q=0.5, epsilon=epsilon, weight=w)),
        )
    elif model == "exact":
        blocks = (spectral_half_exact_block("A", shape, 1.0), half_block("E", size, w))
    else:
        raise ConfigError(f"unknown RPCA model '{model}'")
    s = coupling_scale
    coupling = LinearCoupling.build([_scaled_identity(size, s), _scaled_identity(size, s)], rhs=s * instance.D.ravel())
    return ProblemInstance(blocks=blocks, coupling=coupling)


def numerical_rank(M: np.ndarray, tol: float = 1e-6) -> int:
    return int(np.sum(scipy.linalg.svdvals(M) > tol))


def model_rank_tol(model: str, rank_tol: float, epsilon: float) -> float:
    """Singular values inside the smoothing patch count as zero for the nonconvex model"""
    return max(rank_tol, epsilon) if model == "nonconvex" else rank_tol


def rpca_beta(problem: ProblemInstance, config: RpcaBenchConfig) -> float:
    """config.beta when set, otherwise beta_fraction of the admissible endpoint (of 1/||A|| when c0 = inf)"""
    if config.beta is not None:
        return config.beta
    upper = admissible_beta_upper(problem.c0, problem.norm_a, None)
    if upper <= 0.0:
        upper = 1.0 / problem.norm_a
    return config.beta_fraction * upper


def _relative_error(est: np.ndarray, truth: np.ndarray) -> float:
    norm = np.linalg.norm(truth)
    if norm == 0.0:
        return float(np.linalg.norm(est))
    return float(np.linalg.norm(est - truth) / norm)


def _rank_monitor(shape: Tuple[int, int], every: int, tol: float) -> Callable:
    size = shape[0] * shape[1]

    def monitor(state) -> dict:
        if state.k % every:
            return {}
        return {"rank": numerical_rank(state.x[:size].reshape(shape), tol)}

    return monitor


def _run_rpca_task(task: tuple) -> Tuple[dict, Optional[SolveTrace]]:
    config, seed, model = task
    row = {"seed": seed, "model": model, "rows": config.rows, "cols": config.cols, "rank_true": config.rank}
    try:
        instance = generate_rpca_instance(config.rows, config.cols, config.rank, config.corruption,
                                          config.magnitude, seed, config.weight)
        problem = rpca_problem(instance, model, config.epsilon, config.coupling_scale.get(model, 1.0))
        params = SolverParams(beta=rpca_beta(problem, config), rho=config.rho, max_iter=config.max_iter,
                              tol_E=config.tol_E, stall_window=config.stall_window)
        rank_tol = model_rank_tol(model, config.rank_tol, config.epsilon)
        result = ddrsm_solve(problem, params, monitor=_rank_monitor(instance.shape, config.rank_every, rank_tol))

        size = config.rows * config.cols
        A = result.state.x[:size].reshape(instance.shape)
        E = result.state.x[size:].reshape(instance.shape)
        row.update({
            "status": result.status.value,
            "iterations": result.iterations,
            "error_L": _relative_error(A, instance.L),
            "error_S": _relative_error(E, instance.S),
            "rank": numerical_rank(A, rank_tol),
            "objective": result.trace.records[-1].objective,
            "weight": instance.weight,
            "beta": params.beta,
            "bound_violations": result.bound_violations,
            "time_s": result.elapsed_s,
            "failed": result.status == SolveStatus.DIVERGED,
            "error": "",
        })
        logger.info(f"✅ RPCA seed {seed} {model}: rank {row['rank']}, error_L {row['error_L']:.2e}")
        return row, result.trace
    except (SolverError, np.linalg.LinAlgError) as e:
        detail = e.detail if isinstance(e, SolverError) else str(e)
        logger.error(f"❌ RPCA seed {seed} {model} failed: {detail}")
        row.update({"status": "failed", "failed": True, "error": detail})
        return row, None


def run_rpca_benchmark(config: RpcaBenchConfig, jobs: int = 1) -> BenchReport:
    tasks = [(config, seed, model) for seed in config.seeds for model in config.models]
    logger.info(f"🔄 RPCA benchmark: {len(tasks)} runs on {jobs} worker(s)")
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        outcomes = list(pool.map(_run_rpca_task, tasks))

    report = BenchReport(kind="rpca", config=config.model_dump(mode="json"))
    for (_, seed, model), (row, trace) in zip(tasks, outcomes):
        report.rows.append(row)
        if trace is not None:
            report.traces[f"seed{seed}_{model}"] = trace
    return report
