"""
Pydantic models for configuration files and API request/response schemas
"""

from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, Field, field_validator, model_validator

from core.admm import AdmmParams
from core.problem import SolverParams
from core.prox import SmoothedPowerRegularizer

SCHEMA_VERSION = "1"

BlockKind = Literal[
    "smoothed_power",
    "half",
    "l1",
    "quadratic_fidelity",
    "quadratic",
    "diag_quadratic",
    "spectral_half",
    "spectral_half_exact",
    "nuclear",
]


# Problem file schemas
class BlockConfig(BaseModel):
    name: str
    kind: BlockKind
    dim: Optional[int] = None
    shape: Optional[Tuple[int, int]] = None
    q: float = 0.5
    epsilon: float = 0.01
    weight: float = 1.0
    target: Optional[List[float]] = None
    delta_fid: Optional[float] = None
    hessian: Optional[List[List[float]]] = None
    diag: Optional[List[float]] = None
    linear: Optional[List[float]] = None
    lower: Optional[float] = None
    upper: Optional[float] = None

    @model_validator(mode="after")
    def check_kind_fields(self):
        required = {
            "quadratic_fidelity": ("target", "delta_fid"),
            "quadratic": ("hessian",),
            "diag_quadratic": ("diag",),
            "spectral_half": ("shape",),
            "spectral_half_exact": ("shape",),
            "nuclear": ("shape",),
        }.get(self.kind, ())
        missing = [f for f in required if getattr(self, f) is None]
        if missing:
            raise ValueError(f"block '{self.name}' of kind {self.kind} needs {', '.join(missing)}")
        if self.kind in ("smoothed_power", "half", "l1") and self.dim is None:
            raise ValueError(f"block '{self.name}' of kind {self.kind} needs dim")
        return self


class GeneratorSpec(BaseModel):
    kind: Literal["gaussian", "identity", "zeros"]
    rows: int
    cols: Optional[int] = None
    scale: float = 1.0
    seed: int = 0


class MatrixSource(BaseModel):
    inline: Optional[List[List[float]]] = None
    file: Optional[str] = None
    generator: Optional[GeneratorSpec] = None

    @model_validator(mode="after")
    def exactly_one(self):
        given = [k for k in ("inline", "file", "generator") if getattr(self, k) is not None]
        if len(given) != 1:
            raise ValueError("a coupling matrix needs exactly one of inline, file or generator")
        return self


class CouplingConfig(BaseModel):
    matrices: List[MatrixSource]
    rhs: Optional[List[float]] = None


class ProblemConfig(BaseModel):
    blocks: List[BlockConfig]
    coupling: CouplingConfig


class RunFile(BaseModel):
    problem: ProblemConfig
    solver: SolverParams = SolverParams()
    reference: Optional[Literal["qp"]] = None


# Benchmark file schemas
class CsCell(BaseModel):
    m_rows: int
    n: int
    sparsity: float

    @field_validator("sparsity")
    @classmethod
    def validate_sparsity(cls, v: float) -> float:
        if not 0.0 <= v < 1.0:
            raise ValueError("sparsity must lie in [0, 1)")
        return v


class DdrsmGrid(BaseModel):
    """
    beta is searched as fractions of the admissible endpoint.
    row_scale multiplies the constraint rows; fidelity_scale sets t = scale * ||M||
    for the fidelity variable y / t, None leaving it unscaled.
    """

    beta_fractions: List[float] = [0.5, 0.9]
    rho: List[float] = [1.0, 1.5]
    delta_fid: List[float] = [1.0]
    row_scale: List[float] = [1.0]
    fidelity_scale: List[Optional[float]] = [None]

    @field_validator("row_scale", "fidelity_scale")
    @classmethod
    def validate_scales(cls, v: List[Optional[float]]) -> List[Optional[float]]:
        if any(s is not None and s <= 0 for s in v):
            raise ValueError("scales must be positive")
        return v


class AdmmGrid(BaseModel):
    beta: List[float] = [0.1, 1.0]
    delta_fid: List[float] = [1.0]


class CsBenchConfig(BaseModel):
    cells: List[CsCell]
    seeds: List[int] = [0]
    noise_var: float = 0.01
    normalize: bool = True
    matrix: Literal["gaussian", "bernoulli"] = "gaussian"
    regularizer: SmoothedPowerRegularizer = SmoothedPowerRegularizer()
    solvers: List[Literal["ddrsm", "admm"]] = ["ddrsm", "admm"]
    ddrsm: DdrsmGrid = DdrsmGrid()
    admm: AdmmGrid = AdmmGrid()
    refine: int = 0
    refine_seed: int = 0
    max_iter: int = 2000
    psnr_target: float = 60.0
    tol_E: Optional[float] = None
    tol_p: Optional[float] = None
    tol_d: Optional[float] = None


class CompareConfig(BaseModel):
    """One compressed-sensing instance solved once by each solver with fixed parameters"""

    cell: CsCell
    seed: int = 0
    noise_var: float = 0.01
    normalize: bool = True
    matrix: Literal["gaussian", "bernoulli"] = "gaussian"
    regularizer: SmoothedPowerRegularizer = SmoothedPowerRegularizer()
    delta_fid: float = 1.0
    row_scale: float = Field(default=1.0, gt=0)
    fidelity_scale: Optional[float] = Field(default=None, gt=0)
    ddrsm: SolverParams = SolverParams()
    admm: AdmmParams = AdmmParams()
    psnr_target: float = 60.0


class RpcaBenchConfig(BaseModel):
    rows: int = 30
    cols: int = 30
    rank: int = 2
    corruption: float = 0.05
    magnitude: float = 1.0
    seeds: List[int] = [0]
    models: List[Literal["convex", "nonconvex", "exact"]] = ["convex", "nonconvex"]
    weight: Optional[float] = None
    epsilon: float = 5e-3
    # fixed beta for every model; unset means beta_fraction of the admissible endpoint
    beta: Optional[float] = None
    beta_fraction: float = Field(default=0.9, gt=0, lt=1)
    rho: float = 1.5
    # rows of A + E = D are multiplied by this, per model
    coupling_scale: Dict[str, float] = {"nonconvex": 100.0}
    max_iter: int = 20000
    tol_E: Optional[float] = None
    # 0 disables the stall guard
    stall_window: Optional[int] = 0
    rank_tol: float = 1e-6
    rank_every: int = 50

    @model_validator(mode="after")
    def check_dimensions(self):
        if self.rows > 200 or self.cols > 200:
            raise ValueError("RPCA benchmark is limited to 200 x 200")
        if not 0 <= self.rank <= min(self.rows, self.cols):
            raise ValueError("rank must lie in [0, min(rows, cols)]")
        if not 0.0 <= self.corruption < 1.0:
            raise ValueError("corruption must lie in [0, 1)")
        return self


# Diagnostics schemas
class ReferencePayload(BaseModel):
    x: List[float]
    xi: List[float]
    lam: List[float]
    beta: float
    provenance: str = "oracle-solved"


class DiagnoseRequest(BaseModel):
    trace: List[Dict[str, Optional[float]]]
    reference: Optional[ReferencePayload] = None
    beta: Optional[float] = None
    rho: float = 1.0
    norm_a: Optional[float] = None
    c0: float = 0.0
    constant: Optional[float] = None


# Request schemas
class SolveRequest(RunFile):
    include_trace: bool = True


class CsBenchRequest(CsBenchConfig):
    jobs: int = Field(default=1, ge=1)


# Response schemas
class ValidationResponse(BaseModel):
    success: bool
    runnable: bool
    violations: List[str]
    warnings: List[str]
    norm_estimate: float
    c0: float
    beta: Optional[float] = None
    rho: float


class SolveResponse(BaseModel):
    success: bool
    status: str
    iterations: int
    natural_norm: float
    objective: float
    x: List[float]
    lam: List[float]
    params: Dict[str, Any]
    kkt_residual: Optional[float] = None
    trace: Optional[List[Dict[str, Any]]] = None


class BenchResponse(BaseModel):
    success: bool
    kind: str
    rows: List[Dict[str, Any]]
    schema_version: str = SCHEMA_VERSION


class DiagnoseResponse(BaseModel):
    success: bool
    report: Dict[str, Any]


class ErrorResponse(BaseModel):
    success: bool = False
    error: str
    detail: str
    exit_code: int
    violations: Optional[List[str]] = None
