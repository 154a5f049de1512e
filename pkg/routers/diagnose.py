"""
Diagnostics router: rate fit, error-bound estimate and Fejér check on a posted trace
"""

import pandas as pd
from fastapi import APIRouter, HTTPException, status
from fastapi.responses import JSONResponse

from core.diagnostics import diagnose_trace
from core.errors import SolverError
from core.solver import SolveTrace
from core.storage import jsonable
from models.schemas import DiagnoseRequest, DiagnoseResponse

router = APIRouter()


@router.post("", response_model=DiagnoseResponse)
def diagnose(request: DiagnoseRequest):
    if not request.trace:
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail="trace is empty")

    beta = request.beta
    if beta is None and request.reference is not None:
        beta = request.reference.beta
    try:
        trace = SolveTrace.from_frame(pd.DataFrame(request.trace).astype(float))
        report = diagnose_trace(
            trace,
            beta=beta,
            rho=request.rho,
            norm_a=request.norm_a,
            c0=request.c0,
            constant=request.constant,
        )
    except SolverError as e:
        raise HTTPException(status_code=e.status_code, detail=e.to_dict())
    return JSONResponse(jsonable(DiagnoseResponse(success=True, report=report)))
