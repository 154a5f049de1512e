"""
FastAPI service for the DDRSM solver.
Exposes problem validation, solving, benchmarks and trace diagnostics over HTTP.
"""

import logging
import os

import uvicorn
from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from core.config import configure_logging, get_settings
from core.errors import SolverError
from models.schemas import ErrorResponse
from routers import bench, diagnose, solve

settings = get_settings()
configure_logging(settings.log_level)
logger = logging.getLogger("main")

app = FastAPI(
    title=settings.app_name,
    description="Distributed Douglas-Rachford splitting for multi-block linearly constrained problems",
    version=settings.version,
    docs_url="/api/docs",
    redoc_url="/api/redoc",
)

allowed_origins = os.environ.get("CORS_ORIGINS", "").split(",") if os.environ.get("CORS_ORIGINS") else [
    "http://localhost:5173",
    "http://localhost:3000",
    "http://localhost:8080",
]
logger.info(f"🌐 CORS allowed origins: {allowed_origins}")

app.add_middleware(
    CORSMiddleware,
    allow_origins=allowed_origins,
    allow_credentials=True,
    allow_methods=["GET", "POST", "OPTIONS"],
    allow_headers=["Accept", "Content-Type"],
)


@app.exception_handler(SolverError)
async def solver_error_handler(request: Request, exc: SolverError):
    logger.error(f"❌ {request.url.path}: {type(exc).__name__}: {exc.detail}")
    return JSONResponse(status_code=exc.status_code, content=ErrorResponse(**exc.to_dict()).model_dump(exclude_none=True))


app.include_router(solve.router, prefix="/api/solve", tags=["Solve"])
app.include_router(bench.router, prefix="/api/bench", tags=["Benchmarks"])
app.include_router(diagnose.router, prefix="/api/diagnose", tags=["Diagnostics"])


@app.get("/api/health")
async def health_check():
    """Health check endpoint"""
    return {
        "status": "healthy",
        "version": settings.version,
        "service": settings.app_name,
        "record_timings": settings.record_timings,
    }


if __name__ == "__main__":
    uvicorn.run(
        "main:app",
        host="0.0.0.0",
        port=int(os.environ.get("PORT", 8080)),
        reload=settings.debug,
    )
