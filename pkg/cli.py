"""
Command line for the stochastic Keller-Segel simulator.

    python cli.py simulate configs/desk.toml --seed 3 --out runs/one
    python cli.py ensemble configs/desk.toml --paths 4 --seed 7
    python cli.py picard configs/desk.toml
    python cli.py ito-check configs/desk.toml
    python cli.py certify-operators configs/desk.toml
    python cli.py verify --quick

Exit status: 0 success, 1 acceptance failure, 2 usage or config error,
3 a model validator refused the configuration.
"""
from pathlib import Path
from typing import Any, Dict, List, Optional
import argparse
import logging
import math
import sys
import uuid

import numpy as np

from engine.diagnostics import drift_domination_check, ito_ledger
from engine.fields import build_grid
from engine.integrator import CutoffSpec, IntegratorOptions, run_trajectory
from engine.noise import SeedContext
from engine.operators import certify_semigroup_estimates
from engine.picard import picard_solve, picard_sweep, sweep_rows
from engine.runlog import RunLog
from engine.types import AssumptionViolation, ConfigError, NonnegPolicy
from workflows.acceptance import CHECKS, ito_convergence, run_verify
from workflows.config import (
    RunConfig,
    apply_overrides,
    build_params,
    grid_from,
    integrator_options,
    load_config,
)
from workflows.ensemble import run_ensemble
from workflows.outputs import (
    build_manifest,
    write_csv,
    write_json,
    write_manifest,
    write_series,
    write_snapshots,
)

logger = logging.getLogger("ks")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2
EXIT_VIOLATION = 3


def _manifest(command: str, config: RunConfig, log: RunLog,
              thresholds: Optional[Dict[str, Any]] = None, **extra) -> Dict[str, Any]:
    manifest = build_manifest(command, config.echo(), config.ensemble.seed, grid_from(config),
                              thresholds=thresholds, extra=extra)
    manifest["run_log"] = log.to_dict()
    return manifest


def _out_dir(config: RunConfig) -> Path:
    out = Path(config.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(config: RunConfig, args: argparse.Namespace) -> int:
    """One path: series CSV, snapshots and manifest"""
    params = build_params(config)
    log = RunLog(str(uuid.uuid4()), "simulate")
    log.start()
    s = config.integrator
    record = run_trajectory(params, s.T, s.dt, SeedContext(config.ensemble.seed, 0),
                            integrator_options(config))
    out = _out_dir(config)
    write_series(out / "series.csv", record)
    if config.output.snapshots:
        write_snapshots(out / "snapshots", record)
    log.add_entry("path_0", "trajectory", record.summary(), error=record.error)
    log.finish(True)
    write_manifest(out, _manifest("simulate", config, log,
                                  {"ceiling": s.ceiling, "m_thresholds": s.m_thresholds},
                                  summary=record.summary()))
    logger.info("simulate: %s at t=%s, output in %s", record.status.value, record.times[-1], out)
    return EXIT_OK


def cmd_ensemble(config: RunConfig, args: argparse.Namespace) -> int:
    """config.ensemble.paths paths, folded in path order"""
    log = RunLog(str(uuid.uuid4()), "ensemble")
    log.start()
    stats = run_ensemble(config, workers=args.workers)
    out = _out_dir(config)
    rows = []
    for res in stats.results:
        row = res.summary()
        row["tau_m_hits"] = ";".join(f"{k}={v}" for k, v in row.get("tau_m_hits", {}).items())
        rows.append(row)
        log.add_entry(f"path_{res.path_index}", "path", {"status": res.status.value},
                      error=res.error)
    write_csv(out / "paths.csv", rows, ["path", "status", "final_time", "final_sup", "max_sup",
                                        "min_value", "diverged_at", "tau_m_hits", "error"])
    write_json(out / "ensemble.json", stats.to_dict())
    log.finish(True)
    write_manifest(out, _manifest("ensemble", config, log,
                                  {"ceiling": config.integrator.ceiling,
                                   "n_boot": config.ensemble.n_boot},
                                  counts=stats.counts))
    logger.info("ensemble: %s, output in %s", stats.counts, out)
    return EXIT_OK


def cmd_picard(config: RunConfig, args: argparse.Namespace) -> int:
    """Picard iterates on one frozen path; optional (T, m) sweep"""
    params = build_params(config)
    pc = config.picard
    dt = pc.dt or config.integrator.dt
    m = pc.m or 2.0 * params.u0.sup()
    seed_ctx = SeedContext(config.ensemble.seed, 0)
    log = RunLog(str(uuid.uuid4()), "picard")
    log.start()
    report = picard_solve(params, CutoffSpec(m), pc.T, dt, seed_ctx, pc.tol, pc.max_iter)
    log.add_entry("picard", "solve", report.summary())
    out = _out_dir(config)
    write_csv(out / "picard.csv", report.rows(), ["iter", "diff_sup", "ratio"])
    if pc.sweep_T and pc.sweep_m:
        reports = picard_sweep(params, pc.sweep_T, pc.sweep_m, dt, seed_ctx, pc.tol, pc.max_iter)
        write_csv(out / "picard_sweep.csv", sweep_rows(reports), ["T", "m", "iter", "diff_sup", "ratio"])
        log.add_entry("picard_sweep", "sweep", {"cells": len(reports)})
    log.finish(report.converged, None if report.converged else "no convergence")
    write_manifest(out, _manifest("picard", config, log, {"tol": pc.tol, "max_iter": pc.max_iter},
                                  summary=report.summary()))
    logger.info("picard: %d iterations, converged=%s", report.iterations, report.converged)
    return EXIT_OK


def cmd_ito_check(config: RunConfig, args: argparse.Namespace) -> int:
    """Ledger CSV at the configured dt plus the residual-versus-dt fit"""
    params = build_params(config)
    it = config.ito
    s = config.integrator
    log = RunLog(str(uuid.uuid4()), "ito-check")
    log.start()
    options = IntegratorOptions(nonneg=NonnegPolicy.OFF, store_fields=True, substeps=s.substeps,
                                lp_list=tuple(s.lp))
    record = run_trajectory(params, s.T, s.dt, SeedContext(config.ensemble.seed, 0), options)
    ledger = ito_ledger(record, params, it.p)
    out = _out_dir(config)
    write_csv(out / "ito_ledger.csv", ledger.rows())
    log.add_entry("ledger", "ito_ledger", {"p": it.p, "max_residual": ledger.max_residual})

    summary: Dict[str, Any] = {"p": it.p, "max_residual": ledger.max_residual}
    if len(it.dts) >= 2:
        errors, order = ito_convergence(params, s.T, it.dts, it.paths, config.ensemble.seed, it.p)
        write_csv(out / "ito_convergence.csv",
                  [{"dt": dt, "mean_max_residual": e} for dt, e in zip(it.dts, errors)],
                  ["dt", "mean_max_residual"])
        summary.update(dts=list(it.dts), errors=errors, order=order)
        log.add_entry("convergence", "fit_order", {"order": order})
    constants = params.h2_constants
    if constants is not None and params.chi > 0 and config.ensemble.p0 is not None:
        drift = drift_domination_check(record, params, config.ensemble.p0)
        summary["drift_domination"] = drift.model_dump()
    log.finish(True)
    write_manifest(out, _manifest("ito-check", config, log, {"p": it.p}, summary=summary))
    logger.info("ito-check: max residual %.3e", ledger.max_residual)
    return EXIT_OK


def cmd_certify(config: RunConfig, args: argparse.Namespace) -> int:
    """Semigroup estimate ratios on the configured grid and, with refine, on 2x"""
    c = config.certify
    log = RunLog(str(uuid.uuid4()), "certify-operators")
    log.start()
    t_grid = list(np.geomspace(c.t_min, c.t_max, c.n_t))
    grids = [grid_from(config)]
    if c.refine:
        g = grids[0]
        grids.append(build_grid(2 * g.nx, 2 * g.ny, g.lx, g.ly))
    rows: List[Dict[str, Any]] = []
    for grid in grids:
        report = certify_semigroup_estimates(grid, c.trials, t_grid, c.p_list, c.beta_list,
                                             eps=c.eps, seed=c.seed)
        for r in report.rows:
            rows.append({"nx": grid.nx, "ny": grid.ny, "estimate": r.estimate_id, "p": r.p,
                         "beta": "" if r.beta is None else r.beta, "t": r.t,
                         "max_ratio": r.max_ratio, "trials": r.trials})
        log.add_entry(f"grid_{grid.nx}x{grid.ny}", "certify",
                      {"cells": len(report.rows), "all_finite": report.all_finite()})
    out = _out_dir(config)
    write_csv(out / "certification.csv", rows,
              ["nx", "ny", "estimate", "p", "beta", "t", "max_ratio", "trials"])
    finite = all(math.isfinite(r["max_ratio"]) for r in rows)
    log.finish(finite, None if finite else "non-finite ratio")
    write_manifest(out, _manifest("certify-operators", config, log, {"eps": c.eps}))
    return EXIT_OK if finite else EXIT_FAILED


def cmd_verify(args: argparse.Namespace) -> int:
    results, log = run_verify(Path(args.out) if args.out else Path("runs/verify"),
                              quick=args.quick, workers=args.workers or 1, only=args.only)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        logger.error("verify: %d of %d checks failed: %s", len(failed), len(results), ", ".join(failed))
        return EXIT_FAILED
    logger.info("verify: all %d checks passed", len(results))
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "ensemble": cmd_ensemble,
    "picard": cmd_picard,
    "ito-check": cmd_ito_check,
    "certify-operators": cmd_certify,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ks", description="Stochastic Keller-Segel simulator")
    parser.add_argument("--log-level", default="INFO",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    for name, func in COMMANDS.items():
        p = sub.add_parser(name, help=func.__doc__)
        p.add_argument("config", type=Path, help="TOML run configuration")
        p.add_argument("--seed", type=int, help="override ensemble.seed")
        p.add_argument("--out", help="override output.dir")
        p.add_argument("--dt", type=float, help="override integrator.dt")
        p.add_argument("--paths", type=int, help="override ensemble.paths")
        p.add_argument("--workers", type=int, help="override ensemble.workers")

    v = sub.add_parser("verify", help="acceptance suite; exit 0 iff every check passes")
    v.add_argument("--quick", action="store_true", help="scaled-down problem sizes")
    v.add_argument("--only", nargs="+", choices=[name for name, _ in CHECKS])
    v.add_argument("--workers", type=int, default=1)
    v.add_argument("--out", help="directory for verify_summary.json")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    if args.command == "verify":
        return cmd_verify(args)
    try:
        config = apply_overrides(load_config(args.config), seed=args.seed, out=args.out,
                                 dt=args.dt, paths=args.paths)
        if args.workers is not None and args.workers < 1:
            raise ConfigError(f"--workers must be >= 1, got {args.workers}")
        return COMMANDS[args.command](config, args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except AssumptionViolation as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VIOLATION
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
