#!/usr/bin/env python3
"""
Render figures from a run directory written by cli.py.

    python scripts/plot_traces.py RUN_DIR [--out DIR]

solve runs give natural-map and distance-to-reference curves; benchmark runs
give PSNR against wall time (compressed sensing) or the sampled rank of the
low-rank block (RPCA), one line per trace.
"""

import argparse
import logging
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from core.config import configure_logging  # noqa: E402
from core.storage import read_trace_csv  # noqa: E402

logger = logging.getLogger("plot_traces")


def _save(fig, path: Path) -> None:
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    logger.info(f"💾 wrote {path}")


def plot_solve(trace: pd.DataFrame, out: Path) -> None:
    fig, ax = plt.subplots()
    ax.semilogy(trace["k"], trace["E_norm"], label="‖E(w)‖")
    if trace["dist_ref"].notna().any():
        ax.semilogy(trace["k"], trace["dist_ref"], label="dist(w, w*)")
    ax.set_xlabel("iteration")
    ax.grid(True)
    ax.legend()
    _save(fig, out / "convergence.png")


def plot_psnr(traces: dict, out: Path) -> None:
    fig, ax = plt.subplots()
    for key, df in traces.items():
        if "psnr" in df.columns and df["time_ms"].notna().any():
            ax.plot(df["time_ms"] / 1000.0, df["psnr"], label=key)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("PSNR (dB)")
    ax.grid(True)
    ax.legend(fontsize="small")
    _save(fig, out / "psnr_vs_time.png")


def plot_rank(traces: dict, out: Path) -> None:
    fig, ax = plt.subplots()
    for key, df in traces.items():
        if "rank" in df.columns:
            sampled = df.dropna(subset=["rank"])
            ax.step(sampled["k"], sampled["rank"], where="post", label=key)
    ax.set_xlabel("iteration")
    ax.set_ylabel("rank of A")
    ax.grid(True)
    ax.legend(fontsize="small")
    _save(fig, out / "rank_vs_iteration.png")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="plot traces from a DDRSM run directory")
    parser.add_argument("run_dir", type=Path)
    parser.add_argument("--out", type=Path, default=None, help="figure directory (default: RUN_DIR)")
    args = parser.parse_args(argv)
    configure_logging("INFO")

    out = args.out or args.run_dir
    out.mkdir(parents=True, exist_ok=True)

    if (args.run_dir / "trace.csv").is_file():
        plot_solve(read_trace_csv(args.run_dir / "trace.csv"), out)
        return 0

    trace_dir = args.run_dir / "traces"
    if not trace_dir.is_dir():
        logger.error(f"❌ no trace.csv or traces/ under {args.run_dir}")
        return 2
    traces = {p.stem: read_trace_csv(p) for p in sorted(trace_dir.glob("*.csv"))}
    if any("psnr" in df.columns for df in traces.values()):
        plot_psnr(traces, out)
    if any("rank" in df.columns for df in traces.values()):
        plot_rank(traces, out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
