"""
The ``verify`` acceptance suite.

Each criterion is a registered check returning a CheckResult with the measured
values and the thresholds they were judged against. The suite runs through
SuiteExecutor so every check is logged and a failing check never stops the
rest.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple
import json
import logging
import math

import numpy as np

from engine.diagnostics import (
    cancellation_check,
    fit_order,
    gamma_moment_estimator,
    ito_ledger,
    mass_balance_check,
    moment_estimator,
)
from engine.fields import ScalarField, analyze, build_grid, synthesize
from engine.integrator import CutoffSpec, IntegratorOptions, run_trajectory
from engine.model import (
    LinearNoiseSpec,
    NonlinearNoiseSpec,
    SourceSpec,
    build_model,
    gamma_window,
    p0_window,
    validate_A1_A2,
    validate_H1,
    validate_H2,
)
from engine.noise import SeedContext
from engine.operators import certify_semigroup_estimates, green_solve, spectrum
from engine.picard import picard_solve
from engine.registry import CheckRegistry, CheckResult, get_registry
from engine.runlog import RunLog, SuiteExecutor
from engine.types import NonnegPolicy, RunStatus

from .config import RunConfig
from .ensemble import run_ensemble
from .outputs import write_json

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Profile:
    """Problem sizes for one verify run"""
    name: str
    n: int = 64
    cert_trials: int = 100
    cert_grids: Tuple[int, int] = (64, 128)
    mass_T: float = 1.0
    ito_T: float = 1.0
    ito_paths: int = 4
    picard_dt: float = 1e-3
    global_paths: int = 64
    global_T: float = 10.0
    global_horizon: float = 5.0
    blowup_n: int = 64
    blowup_T: float = 1.0
    nonlinear_paths: int = 256
    nonlinear_T: float = 1.0
    determinism_paths: int = 8
    determinism_T: float = 1.0


FULL = Profile(name="full")
QUICK = Profile(
    name="quick",
    n=32,
    cert_trials=10,
    cert_grids=(32, 64),
    mass_T=0.2,
    ito_T=0.5,
    ito_paths=4,
    picard_dt=2.5e-3,
    global_paths=8,
    global_T=2.0,
    global_horizon=1.0,
    blowup_n=32,
    blowup_T=0.1,
    nonlinear_paths=32,
    nonlinear_T=0.5,
    determinism_paths=4,
    determinism_T=0.2,
)

# Desk model: chi = 1, logistic mu = 1 (mu_tilde = 0.75), K = 0.1 on [0, pi]^2
DESK_KAPPAS = (0.08, 0.06)


def desk_params(n: int, noise=None, enforce: bool = True):
    grid = build_grid(n, n, math.pi, math.pi)
    u0 = ScalarField.cosine_mode(grid, 1, 0, 0.5) + ScalarField.constant(grid, 1.0)
    noise = noise if noise is not None else LinearNoiseSpec.named(DESK_KAPPAS)
    return build_model(1.0, SourceSpec.logistic(1.0), noise, u0, enforce=enforce)


def desk_config(n: int, T: float, paths: int, seed: int = 0, lp=(2.0, 3.0),
                dt: float = 1e-3, workers: int = 1) -> RunConfig:
    return RunConfig.model_validate({
        "grid": {"nx": n, "ny": n},
        "model": {"chi": 1.0, "u0": {"kind": "cosine", "mean": 1.0, "amplitude": 0.5, "k": 1}},
        "source": {"kind": "logistic", "mu": 1.0, "mu_tilde": 0.75},
        "noise": {"kind": "linear", "kappas": list(DESK_KAPPAS)},
        "integrator": {"T": T, "dt": dt, "lp": list(lp)},
        "ensemble": {"paths": paths, "seed": seed, "workers": workers},
    })


def nonlinear_config(n: int, T: float, paths: int, seed: int = 0, workers: int = 1) -> RunConfig:
    return RunConfig.model_validate({
        "grid": {"nx": n, "ny": n},
        "model": {"chi": 1.0, "u0": {"kind": "cosine", "mean": 1.0, "amplitude": 0.5, "k": 1}},
        "source": {"kind": "zero", "mu": None, "c2": 0.0, "mu_prime": 1.0, "n": 2.0},
        "noise": {"kind": "nonlinear", "bs": [0.5], "q": 4.0, "r": 1.0},
        "integrator": {"T": T, "dt": 1e-3, "lp": [2.0, 4.0]},
        "ensemble": {"paths": paths, "seed": seed, "workers": workers},
    })


def _result(name: str, passed: bool, measured: Dict[str, Any], thresholds: Dict[str, Any],
            message: Optional[str] = None) -> CheckResult:
    return CheckResult(name=name, passed=bool(passed), measured=measured,
                       thresholds=thresholds, message=message)


def check_spectral_exactness(profile: Profile = FULL, **_) -> CheckResult:
    """Transform roundtrip, Green solve on one mode, heat-only trajectory"""
    n = profile.n
    grid = build_grid(n, n, math.pi, math.pi)
    rng = np.random.default_rng(0)
    values = 1.0 + rng.random(grid.shape)
    roundtrip = float(np.abs(synthesize(analyze(values)) - values).max() / np.abs(values).max())

    lam = spectrum(grid).eigenvalues[2, 3]
    mode = ScalarField.cosine_mode(grid, 3, 2)
    green = float(np.abs(green_solve(mode).values - mode.values / (1.0 + lam)).max())

    u0 = ScalarField.cosine_mode(grid, 2, 1, 0.5) + ScalarField.constant(grid, 1.0)
    params = build_model(0.0, SourceSpec.zero(), LinearNoiseSpec.named(()), u0, enforce=False)
    record = run_trajectory(params, 1.0, 0.01, SeedContext(0),
                            IntegratorOptions(nonneg=NonnegPolicy.OFF))
    exact = 1.0 + math.exp(-spectrum(grid).eigenvalues[1, 2]) * ScalarField.cosine_mode(grid, 2, 1, 0.5).values
    heat = float(np.abs(record.final_values - exact).max())

    measured = {"roundtrip_rel": roundtrip, "green_abs": green, "heat_abs": heat}
    thresholds = {"roundtrip_rel": 1e-12, "green_abs": 1e-12, "heat_abs": 1e-10}
    return _result("spectral_exactness",
                   all(measured[k] <= thresholds[k] for k in thresholds), measured, thresholds)


CERT_ESTIMATES = ("A1", "A2", "A4", "A5")


def check_operator_certification(profile: Profile = FULL, **_) -> CheckResult:
    """Semigroup estimate ratios are finite and stable under grid refinement"""
    t_grid = list(np.geomspace(1e-3, 1.0, 7))
    reports = [
        certify_semigroup_estimates(
            build_grid(n, n, math.pi, math.pi), profile.cert_trials, t_grid,
            [2.0, 4.0, math.inf], [0.0, 0.25, 0.45], eps=0.05, seed=0,
        )
        for n in profile.cert_grids
    ]
    coarse, fine = (r.summary() for r in reports)
    worst, worst_key = 0.0, None
    for key, ratio in coarse.items():
        if key[0] not in CERT_ESTIMATES:
            continue
        change = abs(fine[key] - ratio) / ratio if ratio > 0 else 0.0
        if change > worst:
            worst, worst_key = change, key
    finite = all(r.all_finite() for r in reports)
    measured = {"max_relative_change": worst, "worst_cell": str(worst_key), "all_finite": finite}
    return _result("operator_certification", finite and worst < 0.1, measured,
                   {"max_relative_change": 0.1})


def _bump(grid, center: float, width: float) -> ScalarField:
    return ScalarField.from_function(
        grid,
        lambda X, Y: 1.0 + np.exp(-((X - center) ** 2 + (Y - center) ** 2) / (2.0 * width ** 2)),
    )


def check_cancellation(profile: Profile = FULL, **_) -> CheckResult:
    """Cancellation identity at 64^2 and its decay under refinement"""
    grid = build_grid(64, 64, math.pi, math.pi)
    u = ScalarField.cosine_mode(grid, 1, 0, 0.3) + ScalarField.constant(grid, 1.0)
    smooth = {}
    for p in (2.0, 3.0):
        lhs, _, res = cancellation_check(u, p)
        smooth[p] = abs(res) / (1.0 + abs(lhs))
    refinement = []
    for n in (8, 16, 32):
        g = build_grid(n, n, math.pi, math.pi)
        lhs, _, res = cancellation_check(_bump(g, 0.5 * math.pi, 0.2), 2.0)
        refinement.append(abs(res) / (1.0 + abs(lhs)))
    passed = (max(smooth.values()) <= 1e-8 and refinement[0] > refinement[1]
              and refinement[2] <= 1e-8)
    measured = {"smooth_rel_p2": smooth[2.0], "smooth_rel_p3": smooth[3.0],
                "refinement_8_16_32": refinement}
    return _result("cancellation", passed, measured, {"rel": 1e-8})


def check_mass_balance(profile: Profile = FULL, **_) -> CheckResult:
    """Per-step mass balance along the desk trajectory"""
    params = desk_params(profile.n)
    record = run_trajectory(params, profile.mass_T, 1e-3, SeedContext(0),
                            IntegratorOptions(store_fields=True))
    res = mass_balance_check(record, params)
    return _result("mass_balance", res <= 1e-8, {"max_rel_residual": res, "status": record.status.value},
                   {"max_rel_residual": 1e-8})


ITO_DTS = (4e-3, 2e-3, 1e-3)


def ito_convergence(params, T: float, dts: Sequence[float], paths: int, seed: int = 0,
                    p: float = 2.0) -> Tuple[List[float], float]:
    """Mean max ledger residual per dt, all on the Brownian path of the finest dt.

    Returns (errors, fitted order).
    """
    finest = min(dts)
    errors = []
    for dt in dts:
        substeps = int(round(dt / finest))
        if abs(substeps * finest - dt) > 1e-9 * dt:
            raise ValueError(f"dt = {dt} is not a multiple of the finest dt {finest}")
        per_path = []
        for path in range(paths):
            record = run_trajectory(
                params, T, dt, SeedContext(seed, path),
                IntegratorOptions(store_fields=True, substeps=substeps, nonneg=NonnegPolicy.OFF),
            )
            per_path.append(ito_ledger(record, params, p).max_residual)
        errors.append(float(np.mean(per_path)))
        logger.info("ito ledger dt=%g: mean max residual %.3e", dt, errors[-1])
    return errors, fit_order(dts, errors)


def check_ito_ledger(profile: Profile = FULL, **_) -> CheckResult:
    """p = 2 ledger residual decays in dt at order >= 0.5 - 0.15"""
    errors, order = ito_convergence(desk_params(profile.n), profile.ito_T, ITO_DTS, profile.ito_paths)
    return _result("ito_ledger", order >= 0.35,
                   {"dts": list(ITO_DTS), "mean_max_residual": errors, "order": order},
                   {"order": 0.35})


def check_picard(profile: Profile = FULL, **_) -> CheckResult:
    """Contraction on a frozen path, degrading with the horizon"""
    params = desk_params(profile.n)
    cutoff = CutoffSpec(2.0 * params.u0.sup())
    short = picard_solve(params, cutoff, 0.05, profile.picard_dt, SeedContext(0), tol=1e-9, max_iter=20)
    long = picard_solve(params, cutoff, 0.2, profile.picard_dt, SeedContext(0), tol=1e-9, max_iter=20)

    stepper = run_trajectory(params, 0.05, profile.picard_dt, SeedContext(0),
                             IntegratorOptions(nonneg=NonnegPolicy.OFF, cutoff=cutoff, store_fields=True))
    gap = float(np.abs(np.asarray(stepper.fields) - short.solution).max())

    passed = (short.converged and all(r < 1.0 for r in short.ratios)
              and long.max_ratio is not None and short.max_ratio is not None
              and long.max_ratio > short.max_ratio)
    measured = {"short": short.summary(), "long": long.summary(),
                "short_ratios": short.ratios, "stepper_gap": gap}
    return _result("picard", passed, measured, {"tol": 1e-9, "max_iter": 20, "ratio": 1.0})


def check_global_regime(profile: Profile = FULL, workers: int = 1, **_) -> CheckResult:
    """No divergence and bounded p0-moments under mu > chi/2"""
    config = desk_config(profile.n, profile.global_T, profile.global_paths, workers=workers)
    stats = run_ensemble(config)
    records = stats.records
    early = sum(1 for r in records if r is None or
                (r.diverged_at is not None and r.diverged_at <= profile.global_horizon))
    window = p0_window(1.0, 0.75)
    mid = moment_estimator(records, 3.0, horizon=profile.global_horizon, window=window, seed=0)
    end = moment_estimator(records, 3.0, horizon=profile.global_T, window=window, seed=0)
    passed = early == 0 and mid.overlaps(end)
    measured = {"diverged_by_horizon": early, "counts": stats.counts,
                "moment_mid": mid.model_dump(), "moment_end": end.model_dump()}
    return _result("global_regime", passed, measured, {"diverged_by_horizon": 0, "ci": "overlap"})


def blowup_params(n: int, mu: Optional[float]):
    grid = build_grid(n, n, 1.0, 1.0)
    u0 = ScalarField.from_function(grid, lambda X, Y: 2000.0 * np.exp(-(X ** 2 + Y ** 2) / (2.0 * 0.1 ** 2)))
    source = SourceSpec.logistic(mu) if mu else SourceSpec.zero()
    return build_model(1.0, source, LinearNoiseSpec.named(()), u0, enforce=False)


def check_blowup_contrast(profile: Profile = FULL, **_) -> CheckResult:
    """Concentrated mass diverges without a source and stays bounded with logistic damping"""
    outcomes = {}
    for label, mu in (("no_source", None), ("logistic", 1.0)):
        params = blowup_params(profile.blowup_n, mu)
        record = run_trajectory(params, profile.blowup_T, 1e-4, SeedContext(0), IntegratorOptions())
        outcomes[label] = {"status": record.status.value, "diverged_at": record.diverged_at,
                           "max_sup": record.running_sup[-1], "mass0": params.m0}
    passed = (outcomes["no_source"]["status"] == RunStatus.DIVERGED.value
              and outcomes["logistic"]["status"] != RunStatus.DIVERGED.value)
    return _result("blowup_contrast", passed, outcomes, {"T": profile.blowup_T})


def check_nonlinear_regime(profile: Profile = FULL, workers: int = 1, **_) -> CheckResult:
    """Tail decay and finite gamma-moments under norm-nonlinear noise"""
    config = nonlinear_config(profile.n, profile.nonlinear_T, profile.nonlinear_paths, workers=workers)
    stats = run_ensemble(config)
    records = stats.records
    window = gamma_window(2.0, 1.0)
    gamma = 0.5 * window
    half = gamma_moment_estimator(records[: len(records) // 2], gamma, window=window, seed=0)
    full = gamma_moment_estimator(records, gamma, window=window, seed=0)
    ratio = full.ci_width / half.ci_width if half.ci_width > 0 else math.inf
    slope = stats.tail.slope if stats.tail else None
    passed = (slope is not None and slope < 0 and math.isfinite(full.estimate)
              and 0.45 <= ratio < 1.0)
    measured = {"tail_slope": slope, "eta_min": stats.tail.eta_min if stats.tail else None,
                "gamma": gamma, "gamma_half": half.model_dump(), "gamma_full": full.model_dump(),
                "ci_width_ratio": ratio, "counts": stats.counts}
    return _result("nonlinear_regime", passed, measured,
                   {"tail_slope": "< 0", "ci_width_ratio": [0.45, 1.0]})


def _fingerprint(stats) -> str:
    payload = stats.to_dict()
    payload["series"] = [r.sup_norms if r else None for r in stats.records]
    return json.dumps(payload, sort_keys=True, default=str)


def check_determinism(profile: Profile = FULL, workers: int = 1, **_) -> CheckResult:
    """Same seed gives bit-identical ensembles for any worker count"""
    config = desk_config(32, profile.determinism_T, profile.determinism_paths, seed=7)
    counts = sorted({1, max(2, workers), profile.determinism_paths})
    prints = {w: _fingerprint(run_ensemble(config, workers=w)) for w in counts}
    identical = len(set(prints.values())) == 1
    return _result("determinism", identical, {"worker_counts": counts, "identical": identical},
                   {"identical": True})


def check_validators(profile: Profile = FULL, **_) -> CheckResult:
    """Validator truth table, including the boundary cases"""
    zero = SourceSpec.zero(c2=0.0, mu_prime=1.0, n=2.0)
    table = {
        "H1_identity_K": abs(validate_H1(LinearNoiseSpec.named((1.0, 0.5, 0.25))).values["K"]
                             - math.sqrt(21.0) / 4.0) < 1e-9,
        "H1_saturating_ok": validate_H1(LinearNoiseSpec.named((1.0,), "saturating")).ok,
        "H1_shifted_violation": not validate_H1(
            LinearNoiseSpec((1.0,), lambda z: z + 1.0, "shifted")).ok,
        "H2_logistic_c1": abs(validate_H2(SourceSpec.logistic(1.0), mu_tilde=0.75).values["c1"] - 1.0) < 1e-12,
        "H2_linear_violation": not validate_H2(SourceSpec.polynomial((0.0, 1.0)), mu_tilde=0.5).ok,
        "H2_zero_violation": not validate_H2(SourceSpec.zero(), mu_tilde=0.5, c1=1.0).ok,
        "A1_q4_ok": validate_A1_A2(NonlinearNoiseSpec((0.5,), 4.0, 1.0), zero).ok,
        "A1_q2r_boundary_violation": not validate_A1_A2(NonlinearNoiseSpec((0.5,), 2.0, 1.0), zero).ok,
        "A1_small_r_violation": not validate_A1_A2(NonlinearNoiseSpec((0.5,), 4.0, 0.25), zero).ok,
        "window_2_4": p0_window(1.0, 0.75) == (2.0, 4.0),
        "window_2_inf": p0_window(1.0, 1.5) == (2.0, math.inf),
        "window_boundary_empty": p0_window(1.0, 0.5) is None,
    }
    failed = [k for k, ok in table.items() if not ok]
    return _result("validators", not failed, {"table": table},
                   {"all": True}, message=f"failed rows: {failed}" if failed else None)


CHECKS = (
    ("spectral_exactness", check_spectral_exactness),
    ("operator_certification", check_operator_certification),
    ("cancellation", check_cancellation),
    ("mass_balance", check_mass_balance),
    ("ito_ledger", check_ito_ledger),
    ("picard", check_picard),
    ("global_regime", check_global_regime),
    ("blowup_contrast", check_blowup_contrast),
    ("nonlinear_regime", check_nonlinear_regime),
    ("determinism", check_determinism),
    ("validators", check_validators),
)


def register_checks(registry: Optional[CheckRegistry] = None) -> CheckRegistry:
    registry = registry or get_registry()
    for name, func in CHECKS:
        if name not in registry.checks:
            registry.register(name, func)
    return registry


def verify_suite(only: Optional[Sequence[str]] = None) -> SuiteExecutor:
    registry = register_checks()
    names = list(only) if only else [name for name, _ in CHECKS]
    return SuiteExecutor(registry, names, suite_id="verify")


def run_verify(out_dir: Optional[Path] = None, quick: bool = False, workers: int = 1,
               only: Optional[Sequence[str]] = None) -> Tuple[List[CheckResult], RunLog]:
    """Run the suite and write verify_summary.json when out_dir is given"""
    profile = QUICK if quick else FULL
    results, log = verify_suite(only).execute({"profile": profile, "workers": workers})
    if out_dir is not None:
        write_json(Path(out_dir) / "verify_summary.json", {
            "profile": profile.name,
            "passed": all(r.passed for r in results),
            "checks": [r.model_dump() for r in results],
            "run_log": log.to_dict(),
        })
    return results, log
