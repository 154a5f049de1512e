"""
Solve router: validate a problem file and run DDRSM on it
"""

import logging

from fastapi import APIRouter, HTTPException
from fastapi.responses import JSONResponse

from core.config import get_settings
from core.diagnostics import kkt_certify, solve_qp_reference
from core.errors import SolverError
from core.problem import resolve_params, validate_problem
from core.solver import ddrsm_solve
from core.storage import build_problem, jsonable
from models.schemas import RunFile, SolveRequest, SolveResponse, ValidationResponse

logger = logging.getLogger(__name__)

router = APIRouter()


@router.post("/validate", response_model=ValidationResponse)
def validate(request: RunFile):
    """Check the problem against the convergence hypotheses without iterating"""
    try:
        problem = build_problem(request.problem, seed=request.solver.seed)
        params = resolve_params(problem, request.solver)
        report = validate_problem(problem, params)
    except SolverError as e:
        raise HTTPException(status_code=e.status_code, detail=e.to_dict())

    response = ValidationResponse(success=True, **report.model_dump())
    return JSONResponse(jsonable(response))


@router.post("", response_model=SolveResponse)
def solve(request: SolveRequest):
    """Run DDRSM; 422 with the violation list if the problem is not runnable"""
    settings = get_settings()
    try:
        problem = build_problem(request.problem, seed=request.solver.seed)
        params = resolve_params(problem, request.solver)
        reference = solve_qp_reference(problem, params.beta) if request.reference == "qp" else None
        result = ddrsm_solve(problem, params, reference=reference)
        kkt = kkt_certify(result.state, problem, params.beta)
    except SolverError as e:
        logger.error(f"❌ solve failed: {e.detail}")
        raise HTTPException(status_code=e.status_code, detail=e.to_dict())

    last = result.trace.records[-1]
    logger.info(f"📊 solve finished: {result.status.value} after {result.iterations} iterations")
    trace = None
    if request.include_trace:
        trace = result.trace.to_frame(settings.record_timings).to_dict(orient="records")

    response = SolveResponse(
        success=result.converged,
        status=result.status.value,
        iterations=result.iterations,
        natural_norm=last.E_norm,
        objective=last.objective,
        x=result.state.x.tolist(),
        lam=result.state.lam.tolist(),
        params=params.model_dump(),
        kkt_residual=kkt,
        trace=trace,
    )
    return JSONResponse(jsonable(response))
