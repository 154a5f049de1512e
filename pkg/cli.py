#!/usr/bin/env python3
"""
Command-line entry point for the DDRSM solver.

    python cli.py solve      --config PATH --out DIR [--seed N] [--reference]
    python cli.py bench-cs   --config PATH --out DIR [--jobs K] [--xlsx]
    python cli.py bench-rpca --config PATH --out DIR [--jobs K] [--xlsx]
    python cli.py compare    --config PATH --out DIR
    python cli.py diagnose   --trace PATH [--reference PATH] --out DIR

Exit codes: 0 success, 2 configuration, 3 validation, 4 output, 5 divergence,
6 diagnostics. Failures also write error.json into the output directory.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Literal, Optional

import numpy as np
from pydantic import BaseModel

from core.benchmarks import BenchReport, run_compare, run_cs_benchmark, run_rpca_benchmark
from core.config import configure_logging, get_settings
from core.diagnostics import ReferenceSolution, diagnose_trace, kkt_certify, solve_qp_reference
from core.errors import ConfigError, DivergenceError, OutputError, SolverError, ValidationFailed
from core.problem import resolve_params, validate_problem
from core.solver import SolveStatus, SolveTrace, ddrsm_solve
from core.storage import RunWriter, build_problem, load_config, read_trace_csv
from models.schemas import CompareConfig, CsBenchConfig, RpcaBenchConfig, RunFile

logger = logging.getLogger("cli")

Subcommand = Literal["solve", "bench-cs", "bench-rpca", "compare", "diagnose"]


class RunConfig(BaseModel):
    subcommand: Subcommand
    config: Optional[Path] = None
    out: Path = Path("runs")
    seed: Optional[int] = None
    jobs: int = 1
    verbosity: int = 0
    record_timings: bool = True
    xlsx: bool = False
    reference: Optional[Path] = None
    use_reference: bool = False
    trace: Optional[Path] = None
    beta: Optional[float] = None
    rho: float = 1.0
    norm_a: Optional[float] = None
    c0: float = 0.0
    constant: Optional[float] = None


def _require(path: Optional[Path], flag: str) -> Path:
    if path is None:
        raise ConfigError(f"{flag} is required for this subcommand")
    return path


def _write_report(writer: RunWriter, report: BenchReport, record_timings: bool, xlsx: bool) -> None:
    frame = report.to_frame(record_timings)
    writer.write_csv(frame, "report.csv", header_comment=f"schema_version={report.schema_version} kind={report.kind}")
    traces = {key: trace.to_frame(record_timings) for key, trace in report.traces.items()}
    for key, df in traces.items():
        writer.write_csv(df, f"traces/{key}.csv")
    writer.write_json(
        {
            "schema_version": report.schema_version,
            "kind": report.kind,
            "rows": frame.to_dict(orient="records"),
            "traces": {key: df.to_dict(orient="list") for key, df in traces.items()},
        },
        "report.json",
    )
    if xlsx:
        writer.write_xlsx({"report": frame, **traces}, "report.xlsx")


def _solve(rc: RunConfig, writer: RunWriter) -> None:
    config_path = _require(rc.config, "--config")
    run_file = load_config(config_path, RunFile)
    params = run_file.solver if rc.seed is None else run_file.solver.model_copy(update={"seed": rc.seed})
    problem = build_problem(run_file.problem, config_path.parent, seed=params.seed)
    params = resolve_params(problem, params)

    report = validate_problem(problem, params)
    writer.write_json(report, "validation.json")
    if not report.runnable:
        raise ValidationFailed(report.violations)

    reference = None
    if rc.reference is not None:
        reference = ReferenceSolution.from_dict(load_json(rc.reference))
    elif rc.use_reference or run_file.reference == "qp":
        reference = solve_qp_reference(problem, params.beta)
    if reference is not None:
        writer.write_json(reference.to_dict(), "reference.json")

    result = ddrsm_solve(problem, params, reference=reference)
    writer.write_csv(result.trace.to_frame(rc.record_timings), "trace.csv")
    last = result.trace.records[-1]
    writer.write_json(
        {
            "status": result.status.value,
            "iterations": result.iterations,
            "natural_norm": last.E_norm,
            "objective": last.objective,
            "infeas": last.infeas,
            "bound_violations": result.bound_violations,
            "kkt_residual": kkt_certify(result.state, problem, params.beta),
            "x": result.state.x,
            "xi": result.state.xi,
            "lam": result.state.lam,
        },
        "result.json",
    )
    writer.write_manifest("solve", params=params, problem=run_file.problem, reference=run_file.reference,
                          norm_estimate=problem.norm_a)
    if result.status == SolveStatus.DIVERGED:
        raise DivergenceError(f"DDRSM diverged at iteration {result.iterations}")


def load_json(path: Path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}:{e.colno}: {e.msg}")


def _bench_cs(rc: RunConfig, writer: RunWriter) -> None:
    config = load_config(_require(rc.config, "--config"), CsBenchConfig)
    if rc.seed is not None:
        config = config.model_copy(update={"seeds": [rc.seed]})
    report = run_cs_benchmark(config, jobs=rc.jobs)
    _write_report(writer, report, rc.record_timings, rc.xlsx)
    writer.write_manifest("bench-cs", config=config, jobs=rc.jobs)


def _bench_rpca(rc: RunConfig, writer: RunWriter) -> None:
    config = load_config(_require(rc.config, "--config"), RpcaBenchConfig)
    if rc.seed is not None:
        config = config.model_copy(update={"seeds": [rc.seed]})
    report = run_rpca_benchmark(config, jobs=rc.jobs)
    _write_report(writer, report, rc.record_timings, rc.xlsx)
    writer.write_manifest("bench-rpca", config=config, jobs=rc.jobs)


def _compare(rc: RunConfig, writer: RunWriter) -> None:
    config = load_config(_require(rc.config, "--config"), CompareConfig)
    if rc.seed is not None:
        config = config.model_copy(update={"seed": rc.seed})
    try:
        report = run_compare(config)
    except ValidationFailed as e:
        writer.write_json({"runnable": False, "violations": e.violations}, "validation.json")
        raise
    _write_report(writer, report, rc.record_timings, rc.xlsx)
    writer.write_manifest("compare", config=config)


def _diagnose(rc: RunConfig, writer: RunWriter) -> None:
    trace = SolveTrace.from_frame(read_trace_csv(_require(rc.trace, "--trace")))
    beta = rc.beta
    if rc.reference is not None:
        reference = ReferenceSolution.from_dict(load_json(rc.reference))
        beta = reference.beta if beta is None else beta
    report = diagnose_trace(trace, beta=beta, rho=rc.rho, norm_a=rc.norm_a, c0=rc.c0, constant=rc.constant)
    writer.write_json(report, "diagnostics.json")
    writer.write_manifest("diagnose", trace=str(rc.trace), beta=beta, rho=rc.rho, norm_a=rc.norm_a, c0=rc.c0,
                          constant=rc.constant)


HANDLERS = {
    "solve": _solve,
    "bench-cs": _bench_cs,
    "bench-rpca": _bench_rpca,
    "compare": _compare,
    "diagnose": _diagnose,
}


def run(rc: RunConfig) -> int:
    """Execute one subcommand; returns the process exit status"""
    settings = get_settings()
    if not (rc.record_timings and settings.record_timings):
        settings = settings.model_copy(update={"record_timings": False})
        rc = rc.model_copy(update={"record_timings": False})
    writer = None
    try:
        writer = RunWriter(str(rc.out), settings)
        HANDLERS[rc.subcommand](rc, writer)
        logger.info(f"✅ {rc.subcommand} finished; artifacts in {rc.out}")
        return 0
    except SolverError as e:
        logger.error(f"❌ {type(e).__name__}: {e.detail}")
        if writer is not None and not isinstance(e, OutputError):
            try:
                writer.write_json(e.to_dict(), "error.json")
            except OutputError:
                pass
        else:
            print(json_error(e), file=sys.stderr)
        return e.exit_code


def json_error(e: SolverError) -> str:
    return json.dumps(e.to_dict())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ddrsm", description="DDRSM solver, benchmarks and diagnostics")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", type=Path, default=Path(get_settings().output_directory), help="output directory")
    common.add_argument("--seed", type=int, default=None, help="override the seed(s) in the config")
    common.add_argument("-v", "--verbose", action="count", default=0)
    common.add_argument("-q", "--quiet", action="count", default=0)
    common.add_argument("--no-timings", action="store_true", help="leave wall-clock columns empty")
    common.add_argument("--xlsx", action="store_true", help="also write report.xlsx")

    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("solve", parents=[common], help="solve one problem file")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--reference", nargs="?", const=True, default=None,
                   help="record distances to a reference: a JSON file, or no value to solve the QP KKT system")

    for name in ("bench-cs", "bench-rpca"):
        p = sub.add_parser(name, parents=[common], help=f"run the {name[6:]} benchmark")
        p.add_argument("--config", type=Path, required=True)
        p.add_argument("--jobs", type=int, default=get_settings().default_jobs)

    p = sub.add_parser("compare", parents=[common], help="DDRSM vs ADMM on one instance")
    p.add_argument("--config", type=Path, required=True)

    p = sub.add_parser("diagnose", parents=[common], help="rate, error-bound and Fejér checks on a trace")
    p.add_argument("--trace", type=Path, required=True)
    p.add_argument("--reference", type=Path, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--rho", type=float, default=1.0)
    p.add_argument("--norm-a", type=float, default=None)
    p.add_argument("--c0", type=float, default=0.0)
    p.add_argument("--constant", type=float, default=None)
    return parser


def parse_args(argv: Optional[List[str]] = None) -> RunConfig:
    args = build_parser().parse_args(argv)
    reference = getattr(args, "reference", None)
    return RunConfig(
        subcommand=args.subcommand,
        config=getattr(args, "config", None),
        out=args.out,
        seed=args.seed,
        jobs=getattr(args, "jobs", 1),
        verbosity=args.verbose - args.quiet,
        record_timings=not args.no_timings,
        xlsx=args.xlsx,
        reference=None if reference in (None, True) else Path(reference),
        use_reference=reference is True,
        trace=getattr(args, "trace", None),
        beta=getattr(args, "beta", None),
        rho=getattr(args, "rho", 1.0),
        norm_a=getattr(args, "norm_a", None),
        c0=getattr(args, "c0", 0.0),
        constant=getattr(args, "constant", None),
    )


def main(argv: Optional[List[str]] = None) -> int:
    rc = parse_args(argv)
    level = {-1: "WARNING", 0: "INFO", 1: "DEBUG"}.get(max(-1, min(1, rc.verbosity)))
    if rc.verbosity <= -2:
        level = "ERROR"
    configure_logging(level)
    np.seterr(all="ignore")
    return run(rc)


if __name__ == "__main__":
    sys.exit(main())
