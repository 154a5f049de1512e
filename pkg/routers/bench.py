"""
Benchmark router for the compressed-sensing and low-rank plus sparse harnesses
"""

import io
import logging
from typing import Literal

import pandas as pd
from fastapi import APIRouter, HTTPException, Query
from fastapi.responses import JSONResponse, StreamingResponse

from core.benchmarks import BenchReport, run_cs_benchmark, run_rpca_benchmark
from core.config import get_settings
from core.errors import SolverError
from core.storage import jsonable
from models.schemas import BenchResponse, CsBenchRequest, RpcaBenchConfig

logger = logging.getLogger(__name__)

router = APIRouter()


def _respond(report: BenchReport, fmt: str):
    settings = get_settings()
    frame = report.to_frame(settings.record_timings)
    if fmt == "xlsx":
        output = io.BytesIO()
        with pd.ExcelWriter(output, engine="xlsxwriter") as writer:
            frame.to_excel(writer, sheet_name="report", index=False)
        output.seek(0)
        return StreamingResponse(
            output,
            media_type="application/vnd.openxmlformats-officedocument.spreadsheetml.sheet",
            headers={"Content-Disposition": f"attachment; filename={report.kind}_report.xlsx"},
        )
    response = BenchResponse(success=not report.failed, kind=report.kind, rows=frame.to_dict(orient="records"))
    return JSONResponse(jsonable(response))


@router.post("/cs", response_model=BenchResponse)
def bench_cs(request: CsBenchRequest, format: Literal["json", "xlsx"] = Query("json")):
    """Tuned DDRSM vs ADMM comparison over the requested cells and seeds"""
    try:
        report = run_cs_benchmark(request, jobs=request.jobs)
    except SolverError as e:
        raise HTTPException(status_code=e.status_code, detail=e.to_dict())
    logger.info(f"📊 cs benchmark: {len(report.rows)} rows, {len(report.failed)} failed")
    return _respond(report, format)


@router.post("/rpca", response_model=BenchResponse)
def bench_rpca(request: RpcaBenchConfig, format: Literal["json", "xlsx"] = Query("json")):
    """Convex vs nonconvex low-rank plus sparse recovery on synthetic matrices"""
    try:
        report = run_rpca_benchmark(request, jobs=get_settings().default_jobs)
    except SolverError as e:
        raise HTTPException(status_code=e.status_code, detail=e.to_dict())
    logger.info(f"📊 rpca benchmark: {len(report.rows)} rows, {len(report.failed)} failed")
    return _respond(report, format)
