"""
FastAPI application for the stochastic Keller-Segel simulator.
Exposes single runs, ensembles and the acceptance checks over REST.
"""
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, ValidationError
from typing import Dict, Any, Optional, List
import logging
import uuid
from datetime import datetime

from engine import __version__
from engine.integrator import run_trajectory
from engine.noise import SeedContext
from engine.registry import get_registry
from engine.runlog import RunLog
from engine.types import AssumptionViolation, ConfigError
from workflows.acceptance import FULL, QUICK, register_checks, verify_suite
from workflows.config import RunConfig, apply_overrides, build_params, integrator_options, parse_config
from workflows.ensemble import run_ensemble_async

logger = logging.getLogger(__name__)

# Initialize FastAPI
app = FastAPI(
    title="Stochastic Keller-Segel API",
    description="Spectral simulator for the stochastic parabolic-elliptic Keller-Segel system",
    version=__version__
)

# In-memory storage
runs_store: Dict[str, Dict[str, Any]] = {}  # run_id -> run results


# Pydantic Models
class RunRequest(BaseModel):
    """Configuration as TOML text or as a section dictionary, plus overrides"""
    config_toml: Optional[str] = None
    config: Optional[Dict[str, Any]] = None
    seed: Optional[int] = None
    dt: Optional[float] = None
    paths: Optional[int] = None
    workers: Optional[int] = None


class VerifyRequest(BaseModel):
    """Request to run (part of) the acceptance suite"""
    quick: bool = True
    only: Optional[List[str]] = None
    workers: int = 1


class CheckCallRequest(BaseModel):
    """Request to call one registered check"""
    name: str
    quick: bool = True


def _config_from(request: RunRequest) -> RunConfig:
    if request.config_toml is not None:
        config = parse_config(request.config_toml, "<request>")
    elif request.config is not None:
        try:
            config = RunConfig.model_validate(request.config)
        except ValidationError as e:
            err = e.errors()[0]
            raise ConfigError(f"{'.'.join(str(k) for k in err['loc'])}: {err['msg']}")
    else:
        raise ConfigError("one of 'config_toml' or 'config' is required")
    return apply_overrides(config, seed=request.seed, dt=request.dt, paths=request.paths)


def _raise_http(e: Exception):
    """ConfigError -> 400, AssumptionViolation -> 422, anything else -> 500"""
    if isinstance(e, AssumptionViolation):
        raise HTTPException(status_code=422, detail=e.report.model_dump())
    if isinstance(e, ValueError):
        raise HTTPException(status_code=400, detail=str(e))
    logger.exception("request failed")
    raise HTTPException(status_code=500, detail=str(e))


# Health check
@app.get("/health")
def health_check():
    """Health check endpoint"""
    return {
        "status": "healthy",
        "timestamp": datetime.now().isoformat(),
        "version": __version__
    }


# Check Registry Endpoints
@app.get("/checks/list")
def list_checks():
    """List registered acceptance checks"""
    checks = get_registry().list_checks()
    return {
        "checks": checks,
        "count": len(checks)
    }


@app.post("/checks/call")
def call_check(request: CheckCallRequest):
    """Run one check directly"""
    try:
        result = get_registry().call(request.name, profile=QUICK if request.quick else FULL)
    except Exception as e:
        raise HTTPException(status_code=400, detail=str(e))
    return result.model_dump()


# Run Endpoints
@app.post("/simulate")
def simulate(request: RunRequest):
    """
    Run one path.

    Returns: run_id, trajectory summary and the norm time series
    """
    try:
        config = _config_from(request)
        params = build_params(config)
        s = config.integrator
        log = RunLog(str(uuid.uuid4()), "simulate")
        log.start()
        record = run_trajectory(params, s.T, s.dt, SeedContext(config.ensemble.seed, 0),
                                integrator_options(config, store_fields=False))
        log.add_entry("path_0", "trajectory", record.summary(), error=record.error)
        log.finish(True)
    except Exception as e:
        _raise_http(e)

    runs_store[log.run_id] = {
        "run_id": log.run_id,
        "kind": "simulate",
        "status": record.status.value,
        "summary": record.summary(),
        "series": record.series_rows(),
        "run_log": log.to_dict(),
        "error": record.error
    }
    return runs_store[log.run_id]


@app.post("/ensemble")
async def ensemble(request: RunRequest):
    """
    Run an ensemble off the event loop.

    Returns: run_id, per-path summaries, counts and estimator outputs
    """
    try:
        config = _config_from(request)
        log = RunLog(str(uuid.uuid4()), "ensemble")
        log.start()
        stats = await run_ensemble_async(config, workers=request.workers)
        for res in stats.results:
            log.add_entry(f"path_{res.path_index}", "path", {"status": res.status.value},
                          error=res.error)
        log.finish(True)
    except Exception as e:
        _raise_http(e)

    runs_store[log.run_id] = {
        "run_id": log.run_id,
        "kind": "ensemble",
        "status": log.status.value,
        "stats": stats.to_dict(),
        "run_log": log.to_dict(),
        "error": None
    }
    return runs_store[log.run_id]


@app.post("/verify")
async def verify(request: VerifyRequest):
    """Run the acceptance suite (quick profile by default)"""
    try:
        executor = verify_suite(request.only)
    except Exception as e:
        raise HTTPException(status_code=400, detail=str(e))
    profile = QUICK if request.quick else FULL
    results, log = await executor.execute_async({"profile": profile, "workers": request.workers})
    runs_store[log.run_id] = {
        "run_id": log.run_id,
        "kind": "verify",
        "status": log.status.value,
        "passed": all(r.passed for r in results),
        "checks": [r.model_dump() for r in results],
        "run_log": log.to_dict(),
        "error": log.error
    }
    return runs_store[log.run_id]


@app.get("/runs/{run_id}")
def get_run(run_id: str):
    """Get a stored run"""
    if run_id not in runs_store:
        raise HTTPException(status_code=404, detail=f"Run '{run_id}' not found")
    return runs_store[run_id]


@app.get("/runs")
def list_runs():
    """List all runs"""
    return {
        "runs": [
            {
                "run_id": rid,
                "kind": r.get("kind"),
                "status": r.get("status"),
                "error": r.get("error")
            }
            for rid, r in runs_store.items()
        ],
        "count": len(runs_store)
    }


@app.on_event("startup")
def startup_event():
    """Register the acceptance checks on startup"""
    register_checks()
    logger.info("registered checks: %s", list(get_registry().list_checks().keys()))


if __name__ == "__main__":
    import uvicorn
    uvicorn.run(app, host="0.0.0.0", port=8000)
