"""
Ensemble runner.

Paths run in a process pool keyed only by (master seed, path index); results
are buffered and folded sequentially in path-index order, so the statistics
are identical for any worker count.
"""
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence
import asyncio
import concurrent.futures as cf
import logging

import numpy as np

from engine.diagnostics import (
    EstimateReport,
    TailReport,
    fit_tail,
    gamma_moment_estimator,
    moment_estimator,
    path_sup_moment,
    sup_linf_estimator,
)
from engine.integrator import TrajectoryRecord, run_trajectory
from engine.model import ModelParams, NonlinearNoiseSpec, gamma_window, growth_constants, in_window, p0_window
from engine.noise import SeedContext
from engine.types import RunStatus

from .config import RunConfig, build_params, integrator_options

logger = logging.getLogger(__name__)

DEFAULT_P0 = 3.0
TAIL_MIN_EXCEEDANCES = 5


@dataclass
class PathResult:
    path_index: int
    record: Optional[TrajectoryRecord]
    status: RunStatus
    error: Optional[str] = None

    def summary(self) -> Dict[str, Any]:
        if self.record is None:
            return {"path": self.path_index, "status": self.status.value, "error": self.error}
        return {"path": self.path_index, **self.record.summary()}


def run_path(config: RunConfig, path_index: int, store_fields: Optional[bool] = None) -> PathResult:
    """One path; exceptions become a failed result"""
    try:
        params = build_params(config)
        record = run_trajectory(
            params,
            config.integrator.T,
            config.integrator.dt,
            SeedContext(config.ensemble.seed, path_index),
            integrator_options(config, store_fields),
        )
    except Exception as e:
        logger.error("path %d failed: %s", path_index, e)
        return PathResult(path_index, None, RunStatus.FAILED, f"{type(e).__name__}: {e}")
    return PathResult(path_index, record, record.status)


@dataclass
class EnsembleStats:
    """Per-path summaries and ensemble estimators, folded in path order"""
    seed: int
    n_paths: int
    results: List[PathResult] = field(default_factory=list)
    counts: Dict[str, int] = field(default_factory=dict)
    moment: Optional[EstimateReport] = None
    tail: Optional[TailReport] = None
    gamma_moment: Optional[EstimateReport] = None
    sup_linf: Optional[EstimateReport] = None
    notes: List[str] = field(default_factory=list)

    @property
    def records(self) -> List[Optional[TrajectoryRecord]]:
        return [r.record for r in self.results]

    @property
    def diverged(self) -> int:
        return self.counts.get(RunStatus.DIVERGED.value, 0)

    def summaries(self) -> List[Dict[str, Any]]:
        return [r.summary() for r in self.results]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "n_paths": self.n_paths,
            "counts": self.counts,
            "moment": self.moment.model_dump() if self.moment else None,
            "tail": self.tail.model_dump() if self.tail else None,
            "gamma_moment": self.gamma_moment.model_dump() if self.gamma_moment else None,
            "sup_linf": self.sup_linf.model_dump() if self.sup_linf else None,
            "notes": self.notes,
            "paths": self.summaries(),
        }


def default_R_grid(samples: Sequence[float], points: int = 12,
                   min_exceedances: int = TAIL_MIN_EXCEEDANCES) -> Optional[np.ndarray]:
    """Log grid from the median up to the min_exceedances-th largest sample.

    Every grid point keeps at least min_exceedances samples at or above it, so
    a lone outlier cannot push the fitted decade past the data.
    """
    x = np.sort(np.asarray(samples, dtype=np.float64))
    if x.size < min_exceedances:
        return None
    hi = float(x[-min_exceedances])
    lo = float(np.median(x))
    if lo >= hi:
        lo = float(x[0])
    if not (lo > 0 and hi > lo):
        return None
    return np.geomspace(lo, hi, points)


def _recorded(config: RunConfig, p: float) -> bool:
    return any(abs(q - p) < 1e-12 for q in config.integrator.lp)


def summarize(stats: EnsembleStats, params: ModelParams, config: RunConfig):
    """Attach the estimators that apply to this noise regime"""
    usable = [r for r in stats.records if r is not None]
    if len(usable) < 2:
        stats.notes.append("fewer than 2 usable paths; estimators skipped")
        return
    ens = config.ensemble

    if isinstance(params.noise, NonlinearNoiseSpec):
        q = ens.tail_q if ens.tail_q is not None else params.noise.q
        if _recorded(config, q):
            samples = [path_sup_moment(r, q) for r in usable]
            grid = default_R_grid(samples)
            if grid is None:
                stats.notes.append("tail: degenerate sample, no R grid")
            else:
                stats.tail = fit_tail(samples, grid, TAIL_MIN_EXCEEDANCES)
        else:
            stats.notes.append(f"tail: L^{q:g} not in integrator.lp")
        constants = growth_constants(params.source)
        window = gamma_window(constants[2], params.noise.r) if constants else None
        gamma = ens.gamma if ens.gamma is not None else 0.5 * (window or 0.25)
        stats.gamma_moment = gamma_moment_estimator(usable, gamma, window=window,
                                                    n_boot=ens.n_boot, seed=ens.seed)
        return

    stats.sup_linf = sup_linf_estimator(usable, n_boot=ens.n_boot, seed=ens.seed)
    constants = params.h2_constants
    if constants is None or params.chi <= 0:
        stats.notes.append("moment: no p0 window (chi = 0 or uncertified source)")
        return
    window = p0_window(params.chi, constants[1])
    p0 = ens.p0 if ens.p0 is not None else DEFAULT_P0
    if not in_window(p0, window):
        stats.notes.append(f"moment: p0 = {p0} outside window {window}")
    elif not _recorded(config, p0):
        stats.notes.append(f"moment: L^{p0:g} not in integrator.lp")
    else:
        stats.moment = moment_estimator(usable, p0, window=window, n_boot=ens.n_boot, seed=ens.seed)


def _fold(config: RunConfig, params: ModelParams, results: Sequence[PathResult]) -> EnsembleStats:
    stats = EnsembleStats(seed=config.ensemble.seed, n_paths=config.ensemble.paths)
    counts = {s.value: 0 for s in RunStatus}
    for res in sorted(results, key=lambda r: r.path_index):
        stats.results.append(res)
        counts[res.status.value] += 1
    stats.counts = counts
    summarize(stats, params, config)
    logger.info("ensemble: %d paths, %s", stats.n_paths, counts)
    return stats


def run_ensemble(config: RunConfig, workers: Optional[int] = None,
                 store_fields: Optional[bool] = None) -> EnsembleStats:
    """Run config.ensemble.paths paths; the validator gate runs before any path"""
    params = build_params(config)
    workers = workers or config.ensemble.workers
    n = config.ensemble.paths
    if workers == 1 or n == 1:
        results = [run_path(config, i, store_fields) for i in range(n)]
    else:
        with cf.ProcessPoolExecutor(max_workers=min(workers, n)) as ex:
            results = list(ex.map(run_path, [config] * n, range(n), [store_fields] * n))
    return _fold(config, params, results)


async def run_ensemble_async(config: RunConfig, workers: Optional[int] = None,
                             store_fields: Optional[bool] = None) -> EnsembleStats:
    """Async variant of run_ensemble for the HTTP service"""
    params = build_params(config)
    workers = workers or config.ensemble.workers
    n = config.ensemble.paths
    if workers == 1 or n == 1:
        results = [await asyncio.to_thread(run_path, config, i, store_fields) for i in range(n)]
    else:
        loop = asyncio.get_running_loop()
        with cf.ProcessPoolExecutor(max_workers=min(workers, n)) as ex:
            futures = [loop.run_in_executor(ex, run_path, config, i, store_fields) for i in range(n)]
            results = await asyncio.gather(*futures)
    return _fold(config, params, results)
