"""
Configuration loading and run-artifact storage (CSV, JSON, spreadsheet)
"""

import json
import logging
import math
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Optional, Type, TypeVar

import numpy as np
import pandas as pd
from pydantic import BaseModel, ValidationError

from models.schemas import SCHEMA_VERSION, BlockConfig, MatrixSource, ProblemConfig

from . import prox as px
from . import problem as pb
from .config import Settings, get_settings
from .errors import ConfigError, OutputError

logger = logging.getLogger(__name__)

ModelT = TypeVar("ModelT", bound=BaseModel)

FIXED_CREATED = datetime(2000, 1, 1)


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

def load_config(path: Path, model: Type[ModelT]) -> ModelT:
    """Parse a JSON config file into `model`; parse errors carry line and column"""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}:{e.colno}: {e.msg}")
    try:
        return model.model_validate(data)
    except ValidationError as e:
        problems = "; ".join(f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors())
        raise ConfigError(f"{path}: {problems}")


def _load_matrix(source: MatrixSource, base_dir: Path) -> np.ndarray:
    if source.inline is not None:
        return np.atleast_2d(np.asarray(source.inline, dtype=float))
    if source.file is not None:
        file = (base_dir / source.file).resolve()
        try:
            return np.atleast_2d(np.load(file))
        except (OSError, ValueError) as e:
            raise ConfigError(f"cannot read coupling matrix {file}: {e}")
    g = source.generator
    cols = g.rows if g.cols is None else g.cols
    if g.kind == "gaussian":
        return g.scale * np.random.default_rng(g.seed).standard_normal((g.rows, cols))
    if g.kind == "identity":
        return g.scale * np.eye(g.rows, cols)
    return np.zeros((g.rows, cols))


def _build_block(cfg: BlockConfig) -> pb.BlockSpec:
    if cfg.kind == "smoothed_power":
        reg = px.SmoothedPowerRegularizer(q=cfg.q, epsilon=cfg.epsilon, weight=cfg.weight)
        return pb.smoothed_power_block(cfg.name, cfg.dim, reg)
    if cfg.kind == "half":
        return pb.half_block(cfg.name, cfg.dim, cfg.weight)
    if cfg.kind == "l1":
        return pb.l1_block(cfg.name, cfg.dim, cfg.weight, cfg.lower, cfg.upper)
    if cfg.kind == "quadratic_fidelity":
        fid = px.QuadraticFidelity(target=cfg.target, delta_fid=cfg.delta_fid)
        return pb.fidelity_block(cfg.name, fid, cfg.lower, cfg.upper)
    if cfg.kind == "quadratic":
        return pb.quadratic_block(cfg.name, cfg.hessian, cfg.linear)
    if cfg.kind == "diag_quadratic":
        return pb.diag_quadratic_block(cfg.name, cfg.diag, cfg.linear, cfg.lower, cfg.upper)
    if cfg.kind == "spectral_half":
        reg = px.SmoothedPowerRegularizer(q=cfg.q, epsilon=cfg.epsilon, weight=cfg.weight)
        return pb.spectral_half_block(cfg.name, cfg.shape, reg)
    if cfg.kind == "spectral_half_exact":
        return pb.spectral_half_exact_block(cfg.name, cfg.shape, cfg.weight)
    return pb.nuclear_block(cfg.name, cfg.shape, cfg.weight)


def build_problem(config: ProblemConfig, base_dir: Optional[Path] = None, seed: int = 0) -> pb.ProblemInstance:
    base_dir = Path(".") if base_dir is None else Path(base_dir)
    try:
        blocks = tuple(_build_block(b) for b in config.blocks)
    except ValidationError as e:
        raise ConfigError(f"invalid regularizer parameters: {e.errors()[0]['msg']}")
    matrices = [_load_matrix(m, base_dir) for m in config.coupling.matrices]
    coupling = pb.LinearCoupling.build(matrices, config.coupling.rhs, seed=seed)
    return pb.ProblemInstance(blocks=blocks, coupling=coupling)


# ---------------------------------------------------------------------------
# Writing
# ---------------------------------------------------------------------------

def jsonable(value: Any) -> Any:
    """Plain JSON types; nan becomes null and infinities become "inf"/"-inf" """
    if isinstance(value, BaseModel):
        return jsonable(value.model_dump(mode="python"))
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return jsonable(value.tolist())
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(value, (np.bool_,)):
        return bool(value)
    if hasattr(value, "value") and isinstance(getattr(value, "value"), str):
        return value.value
    return value


class RunWriter:
    """Writes every artifact of one run into a single output directory"""

    def __init__(self, output_directory: str, settings: Optional[Settings] = None):
        self.settings = settings or get_settings()
        self.output_directory = Path(output_directory)
        try:
            self.output_directory.mkdir(parents=True, exist_ok=True)
            marker = self.output_directory / ".write_test"
            marker.write_text("")
            marker.unlink()
        except OSError as e:
            raise OutputError(f"output directory {self.output_directory} is not writable: {e}")

    @property
    def float_format(self) -> str:
        return f"%.{self.settings.csv_significant_digits}g"

    def _path(self, name: str) -> Path:
        path = self.output_directory / name
        path.parent.mkdir(parents=True, exist_ok=True)
        return path

    def write_csv(self, df: pd.DataFrame, name: str, header_comment: Optional[str] = None) -> Path:
        path = self._path(name)
        try:
            with open(path, "w", encoding="utf-8", newline="") as f:
                if header_comment:
                    f.write(f"# {header_comment}\n")
                df.to_csv(f, index=False, float_format=self.float_format, na_rep="", lineterminator="\n")
        except OSError as e:
            raise OutputError(f"failed to write {path}: {e}")
        logger.info(f"💾 wrote {path}")
        return path

    def write_json(self, payload: Any, name: str) -> Path:
        path = self._path(name)
        try:
            path.write_text(json.dumps(jsonable(payload), indent=2) + "\n", encoding="utf-8")
        except OSError as e:
            raise OutputError(f"failed to write {path}: {e}")
        logger.info(f"💾 wrote {path}")
        return path

    def write_xlsx(self, frames: Dict[str, pd.DataFrame], name: str) -> Path:
        path = self._path(name)
        try:
            with pd.ExcelWriter(path, engine="xlsxwriter") as writer:
                if not self.settings.record_timings:
                    # a fixed creation date keeps the workbook byte-identical across runs
                    writer.book.set_properties({"created": FIXED_CREATED})
                for sheet, df in frames.items():
                    df.to_excel(writer, sheet_name=sheet[:31], index=False)
        except OSError as e:
            raise OutputError(f"failed to write {path}: {e}")
        logger.info(f"💾 wrote {path}")
        return path

    def write_manifest(self, subcommand: str, **entries: Any) -> Path:
        manifest = {
            "schema_version": SCHEMA_VERSION,
            "subcommand": subcommand,
            "record_timings": self.settings.record_timings,
            "settings": self.settings.model_dump(),
            **entries,
        }
        return self.write_json(manifest, "manifest.json")


def read_trace_csv(path: Path) -> pd.DataFrame:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"trace file not found: {path}")
    try:
        return pd.read_csv(path, comment="#")
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ConfigError(f"cannot parse trace {path}: {e}")
