"""Command-line driver: structure checks, constants, flow runs and bound checks.

Exit codes::

    0  success
    1  a structure check failed or a bound was violated
    2  configuration or argument error
    3  a theorem hypothesis does not hold for the integrand
    4  the discrete solution blew up
    5  a constant could not be resolved or a precondition failed
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import platform
import sys
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import scipy

from . import __version__
from .config import RunConfig, dump, load
from .constants import (
    FLOOR_FACTOR,
    BarrierParams,
    compute_a_p,
    compute_c2,
    compute_s_eps,
    compute_trace_bounds,
    estimate_c1,
    theorem_params,
)
from .errors import (
    AnisoflowError,
    BlowUpError,
    ConfigError,
    HypothesisNotMetError,
)
from .estimates import EstimateReport, verify
from .integrand import check_structure
from .solver import FlowConfig, GraphState, Trajectory, run, take_snapshot

logger = logging.getLogger("anisoflow")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2
EXIT_HYPOTHESIS = 3
EXIT_BLOWUP = 4
EXIT_UNRESOLVED = 5

COMMANDS = ("check", "constants", "run", "verify", "pipeline")
DIAGNOSTIC_FIELDS = ("t", "max_u", "min_u", "max_F", "dt")
VERIFY_FIELDS = ("t", "value", "bound", "margin", "cell")


class Failed(Exception):
    """A command completed but its outcome is a failure (exit 1)."""


# -- serialisation ------------------------------------------------------------


def _clean(obj):
    # JSON has no inf/nan; map them to null
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_clean(obj), indent=2, allow_nan=False) + "\n")


def _write_table(path: Path, fields, rows, fmt: str) -> Path:
    """Write rows as CSV (LF endings) or as a JSON list of records."""
    if fmt == "json":
        path = path.with_suffix(".json")
        _write_json(path, [dict(zip(fields, r)) for r in rows])
        return path
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(fields)
    writer.writerows([[repr(x) if isinstance(x, float) else x for x in r] for r in rows])
    path.write_text(buf.getvalue())
    return path


# -- phases -------------------------------------------------------------------


class Session:
    """State shared by the phases of one invocation."""

    def __init__(self, cfg: RunConfig, out: Path, fmt: str):
        self.cfg = cfg
        self.out = out
        self.fmt = fmt
        self.outputs: list[str] = []
        self.timings: dict[str, float] = {}
        self._params: Optional[BarrierParams] = None
        self._traj: Optional[Trajectory] = None

    def timed(self, name: str, fn: Callable):
        start = time.perf_counter()
        try:
            return fn()
        finally:
            self.timings[name] = time.perf_counter() - start

    def record(self, path: Path) -> None:
        self.outputs.append(path.name if path.parent == self.out else str(path.relative_to(self.out)))

    # measured sup|u0| unless pinned
    def height_bound(self) -> float:
        if self.cfg.M is not None:
            return self.cfg.M
        return float(np.abs(self.cfg.initial.sample(self.cfg.grid)).max())

    def params(self) -> BarrierParams:
        if self._params is None:
            cfg = self.cfg
            R = cfg.R if cfg.R is not None else cfg.grid.L / 4.0
            self._params = theorem_params(
                cfg.integrand,
                self.height_bound(),
                cfg.integrand.dim,
                cfg.theorem,
                R=R if cfg.theorem == 3 else None,
                budget=cfg.budget,
            )
        return self._params

    def end_time(self) -> float:
        if self.cfg.T is not None:
            return self.cfg.T
        return self.params().Tprime


def phase_check(s: Session) -> bool:
    report = check_structure(s.cfg.integrand, samples=1000, seed=s.cfg.seed)
    path = s.out / "check.json"
    _write_json(path, {"family": s.cfg.integrand.family, **report.to_dict()})
    s.record(path)
    for name, ok in report.passes.items():
        logger.info("check %-20s %s", name, "pass" if ok else "FAIL")
    return report.all_pass


def phase_constants(s: Session) -> None:
    cfg = s.cfg
    F = cfg.integrand
    n = F.dim
    P = FLOOR_FACTOR * F.apex_value()
    symmetric = check_structure(F, samples=200, seed=0).symmetric
    eps = math.sqrt(2.0 / n)
    k_lo = k_hi = None
    if n > 1:
        k_lo, k_hi = compute_trace_bounds(F, cfg.budget)
    doc = {
        "family": F.family,
        "n": n,
        "C1": estimate_c1(F, cfg.budget),
        "A_P": {repr(P): compute_a_p(F, P, cfg.budget)},
        "k_lo": k_lo,
        "k_hi": k_hi,
        "C2": compute_c2(F, cfg.budget) if symmetric else None,
        "S_eps": {repr(eps): compute_s_eps(F, eps, cfg.budget) if symmetric else None},
        "budget": {
            "direction_samples": cfg.budget.direction_samples,
            "s_grid": cfg.budget.s_grid,
            "s_max": cfg.budget.s_max,
            "refine_iters": cfg.budget.refine_iters,
        },
        "seed": cfg.seed,
    }
    path = s.out / "constants.json"
    _write_json(path, doc)
    s.record(path)
    if cfg.theorem is not None:
        params = s.params()
        path = s.out / "params.json"
        _write_json(path, params.to_dict())
        s.record(path)


def _save_field(u: np.ndarray, path: Path, output: str) -> None:
    if output == "binary":
        u.astype("<f8").tofile(path)
    else:
        buf = io.StringIO()
        for row in np.atleast_2d(u):
            buf.write(",".join(repr(float(x)) for x in row) + "\n")
        path.write_text(buf.getvalue())


def _load_field(path: Path, output: str, shape) -> np.ndarray:
    if output == "binary":
        return np.fromfile(path, dtype="<f8").reshape(shape)
    rows = [[float(x) for x in line.split(",")] for line in path.read_text().splitlines()]
    return np.array(rows).reshape(shape)


def phase_run(s: Session) -> Trajectory:
    cfg = s.cfg
    flow = FlowConfig(
        cfg.grid, cfg.integrand, cfg.initial, s.end_time(), cfg.cfl_safety, cfg.sample_every
    )
    traj = run(flow)
    s._traj = traj
    snapdir = s.out / "snapshots"
    snapdir.mkdir(exist_ok=True)
    for old in snapdir.glob("snap_*"):
        old.unlink()
    ext = "bin" if cfg.output == "binary" else "csv"
    index = []
    for i, snap in enumerate(traj.snapshots):
        path = snapdir / f"snap_{i:05d}.{ext}"
        _save_field(snap.state.u, path, cfg.output)
        s.record(path)
        index.append({"index": i, "t": snap.t, "dt": snap.dt, "file": f"snapshots/{path.name}"})
    meta = {
        "n": cfg.grid.n,
        "cells": cfg.grid.cells,
        "L": cfg.grid.L,
        "T": flow.T,
        "steps": traj.steps,
        "dt0": traj.dt0,
        "output": cfg.output,
        "snapshots": index,
    }
    path = s.out / "trajectory.json"
    _write_json(path, meta)
    s.record(path)
    rows = [(sn.t, sn.max_u, sn.min_u, sn.max_F, sn.dt) for sn in traj.snapshots]
    s.record(_write_table(s.out / "diagnostics.csv", DIAGNOSTIC_FIELDS, rows, s.fmt))
    logger.info("run: %d steps to T=%.6g, %d snapshots", traj.steps, flow.T, len(traj.snapshots))
    return traj


def load_trajectory(s: Session) -> Optional[Trajectory]:
    """Trajectory previously written to the output directory, if it matches the grid."""
    path = s.out / "trajectory.json"
    if not path.exists():
        return None
    meta = json.loads(path.read_text())
    grid = s.cfg.grid
    if (meta["n"], meta["cells"], meta["L"]) != (grid.n, grid.cells, grid.L):
        return None
    traj = Trajectory(grid, dt0=meta["dt0"], steps=meta["steps"])
    F = s.cfg.integrand
    for entry in meta["snapshots"]:
        u = _load_field(s.out / entry["file"], meta["output"], grid.shape)
        traj.snapshots.append(take_snapshot(GraphState(u, entry["t"]), F, grid, entry["dt"]))
    return traj


def phase_verify(s: Session) -> EstimateReport:
    cfg = s.cfg
    if cfg.theorem is None:
        raise ConfigError("verify needs a [theorem] section", "[theorem]")
    params = s.params()
    traj = s._traj if s._traj is not None else load_trajectory(s)
    if traj is None:
        logger.info("verify: no stored trajectory, running the flow")
        traj = s.timed("run", lambda: phase_run(s))
    report = verify(traj, cfg.integrand, cfg.theorem, params, cfg.grid)
    rows = [(r.t, r.value, r.bound, r.margin, r.cell) for r in report.rows]
    if s.fmt == "csv":
        s.record(_write_table(s.out / "verify.csv", VERIFY_FIELDS, rows, "csv"))
    summary = report.summary()
    summary["max_z"] = max((r.z for r in report.rows), default=None)
    summary["floor_is_sampled"] = cfg.theorem == 2
    if s.fmt == "json":
        summary["rows"] = [dict(zip(VERIFY_FIELDS, r)) for r in rows]
    summ = s.out / "verify.json"
    _write_json(summ, summary)
    s.record(summ)
    logger.info("verify: theorem %d, min margin %s", cfg.theorem, summary["min_margin"])
    return report


def _write_manifest(s: Session, config_path: str, command: str, status: int) -> None:
    manifest = {
        "command": command,
        "config_path": str(config_path),
        "config": s.cfg.resolved,
        "seed": s.cfg.seed,
        "exit_code": status,
        "versions": {
            "anisoflow": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
        "outputs": sorted(set(s.outputs)),
        "wall_clock_s": s.timings,
        "finished_at": datetime.now(timezone.utc).isoformat(),
    }
    _write_json(s.out / "manifest.json", manifest)
    (s.out / "config.resolved.ini").write_text(dump(s.cfg.resolved))


def execute(command: str, cfg: RunConfig, out: Path, fmt: str = "csv") -> tuple[int, Session]:
    """Run one command; returns the exit code and the session (for its outputs)."""
    out.mkdir(parents=True, exist_ok=True)
    s = Session(cfg, out, fmt)
    try:
        if command == "check":
            if not s.timed("check", lambda: phase_check(s)):
                raise Failed("structure check failed")
        elif command == "constants":
            s.timed("constants", lambda: phase_constants(s))
        elif command == "run":
            s.timed("run", lambda: phase_run(s))
        elif command == "verify":
            report = s.timed("verify", lambda: phase_verify(s))
            if report.violated:
                raise Failed(f"bound violated, min margin {report.min_margin:.6g}")
        elif command == "pipeline":
            if cfg.theorem is None:
                raise ConfigError("pipeline needs a [theorem] section", "[theorem]")
            # a symmetry failure is a hypothesis matter, decided when the
            # theorem's constants are assembled
            s.timed("check", lambda: phase_check(s))
            s.timed("constants", lambda: phase_constants(s))
            s.timed("run", lambda: phase_run(s))
            report = s.timed("verify", lambda: phase_verify(s))
            if report.violated:
                raise Failed(f"bound violated, min margin {report.min_margin:.6g}")
        else:
            raise ValueError(f"unknown command {command!r}")
        status = EXIT_OK
    except Failed as exc:
        logger.error("%s", exc)
        status = EXIT_FAILED
    except ConfigError as exc:
        logger.error("config error: %s", exc)
        status = EXIT_CONFIG
    except HypothesisNotMetError as exc:
        logger.error("%s", exc)
        status = EXIT_HYPOTHESIS
    except BlowUpError as exc:
        logger.error("blow-up: %s", exc)
        status = EXIT_BLOWUP
    except AnisoflowError as exc:
        logger.error("%s", exc)
        status = EXIT_UNRESOLVED
    return status, s


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="anisoflow",
        description="Gradient estimates for periodic anisotropic mean curvature flow of graphs.",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="INI configuration file")
    parser.add_argument("--out", default="out", help="output directory (default: out)")
    parser.add_argument("--seed", type=int, default=None, help="override [run] seed")
    parser.add_argument("--format", choices=("csv", "json"), default="csv", help="tabular output format")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = load(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out)
    status, session = execute(args.command, cfg, out, args.format)
    _write_manifest(session, args.config, args.command, status)
    if status == EXIT_OK and args.command in ("verify", "pipeline"):
        summary = json.loads((out / "verify.json").read_text())
        print(f"theorem {summary['theorem']}: min_margin={summary['min_margin']} violated={summary['violated']}")
    return status


if __name__ == "__main__":
    sys.exit(main())
