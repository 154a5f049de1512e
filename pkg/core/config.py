"""
Configuration management for the DDRSM solver service
"""

import logging
import sys

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process-wide defaults. Override with DDRSM_* environment variables or a .env file."""

    model_config = SettingsConfigDict(env_prefix="DDRSM_", env_file=".env", case_sensitive=False, extra="ignore")

    # App settings
    app_name: str = "DDRSM Solver API"
    version: str = "1.0.0"
    debug: bool = False
    log_level: str = "INFO"

    # Output
    output_directory: str = "runs"
    csv_significant_digits: int = 17
    record_timings: bool = True
    default_jobs: int = 1

    # Numerics
    power_iterations: int = 100
    norm_safety: float = 1.01
    stall_window: int = 200
    stall_rtol: float = 1e-12
    bound_tolerance: float = 1e-10


def get_settings() -> Settings:
    """Get application settings"""
    return Settings()


def configure_logging(level: str = "INFO") -> None:
    """Install a single stream handler on the root logger"""
    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)-7s %(name)s: %(message)s"))
    root.addHandler(handler)
    root.setLevel(level.upper())
