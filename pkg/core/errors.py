"""
Error types shared by the solver library, the CLI and the HTTP routers
"""

from typing import Optional


class SolverError(Exception):
    """Base error. Carries the HTTP status and CLI exit code it maps to."""

    status_code: int = 500
    exit_code: int = 1

    def __init__(self, detail: str, *, status_code: Optional[int] = None, exit_code: Optional[int] = None):
        super().__init__(detail)
        self.detail = detail
        if status_code is not None:
            self.status_code = status_code
        if exit_code is not None:
            self.exit_code = exit_code

    def to_dict(self) -> dict:
        return {
            "success": False,
            "error": type(self).__name__,
            "detail": self.detail,
            "exit_code": self.exit_code,
        }


class ConfigError(SolverError):
    """Configuration file missing, unparsable or violating the schema"""

    status_code = 400
    exit_code = 2


class DimensionError(ConfigError):
    """Stacked vectors or matrices disagree with the problem layout"""


class InvalidModulusError(ConfigError):
    """Negative weak-convexity modulus"""


class InvalidSetError(ConfigError):
    """Box constraint with lo > hi somewhere"""


class UnsupportedExponentError(ConfigError):
    """Closed-form prox requested for an exponent it does not cover"""


class InitializationError(ConfigError):
    """Subgradient oracle undefined at the requested initial point"""


class ValidationFailed(SolverError):
    """Problem/parameter combination violates the convergence hypotheses"""

    status_code = 422
    exit_code = 3

    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations) or "validation failed")
        self.violations = violations

    def to_dict(self) -> dict:
        payload = super().to_dict()
        payload["violations"] = list(self.violations)
        return payload


class OutputError(SolverError):
    """Output directory cannot be created or written"""

    status_code = 500
    exit_code = 4


class DivergenceError(SolverError):
    """An iterate became non-finite"""

    status_code = 500
    exit_code = 5


class DiagnosticError(SolverError):
    status_code = 422
    exit_code = 6


class FejerRefusedError(DiagnosticError):
    """Fejér constant depends on the unknown error-bound constant"""


class InsufficientTraceError(DiagnosticError):
    """Trace too short or missing the columns a diagnostic needs"""


class ReferenceCertificationError(DiagnosticError):
    """Reference point fails KKT certification"""


class UndefinedPeakError(DiagnosticError):
    """PSNR requested against an all-zero ground truth"""
