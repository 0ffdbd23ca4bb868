"""
Checks evaluated along stored trajectories: the chemotaxis cancellation
identity, the pathwise Ito ledger for ||u||_p^p, discrete mass balance, drift
domination, and ensemble moment/tail statistics with bootstrap intervals.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple
import logging
import math

import numpy as np
from pydantic import BaseModel, Field

from .fields import ScalarField, analyze, parseval_weights, synthesize
from .integrator import TrajectoryRecord, forcing_coeffs
from .model import ModelParams, delta as delta_of, young_allowance
from .noise import diffusion_arrays
from .operators import flux_div_coeffs, gradient_arrays, spectrum
from .types import RunStatus

logger = logging.getLogger(__name__)

DEFAULT_BOOTSTRAP = 2000
DEFAULT_LEVEL = 0.95


def signed_power(values: np.ndarray, s: float) -> np.ndarray:
    """u |u|^(s-1), the odd extension of u^s"""
    return values * np.power(np.abs(values), s - 1.0)


def cancellation_check(u: ScalarField, p: float) -> Tuple[float, float, float]:
    """(lhs, rhs, lhs - rhs) for

        p int u|u|^(p-2) grad u . grad(G u) = -int |u|^p G u + int |u|^p u
    """
    if p < 2:
        raise ValueError(f"p must be >= 2, got {p}")
    if u.diverged or not np.all(np.isfinite(u.values)):
        raise ValueError("u must be finite")
    grid = u.grid
    area = grid.cell_area
    a = analyze(u.values)
    v_coeffs = a / (spectrum(grid).eigenvalues + 1.0)
    ux, uy = gradient_arrays(a, grid)
    vx, vy = gradient_arrays(v_coeffs, grid)
    weight = signed_power(u.values, p - 1.0)
    lhs = p * float(np.sum(weight * (ux * vx + uy * vy)) * area)
    up = np.power(np.abs(u.values), p)
    v = synthesize(v_coeffs)
    rhs = float(np.sum(up * (u.values - v)) * area)
    return lhs, rhs, lhs - rhs


@dataclass
class ItoLedger:
    """Cumulative terms of the Ito formula for ||u||_p^p on the stored grid.

    residual = lhs_norm - lhs_norm[0] + dissipation
               - (chemo + source + martingale + quadratic + clip)
    """
    p: float
    times: np.ndarray
    lhs_norm: np.ndarray
    dissipation: np.ndarray
    chemo_term: np.ndarray
    source_term: np.ndarray
    martingale_term: np.ndarray
    quadratic_term: np.ndarray
    clip_term: np.ndarray
    residual: np.ndarray
    # last step crosses tau_m and is left out of max_residual
    crossing_excluded: bool = False

    @property
    def max_residual(self) -> float:
        res = self.residual[:-1] if self.crossing_excluded else self.residual
        return float(np.max(np.abs(res))) if res.size else 0.0

    def rows(self) -> List[Dict[str, float]]:
        cols = ("lhs_norm", "dissipation", "chemo_term", "source_term",
                "martingale_term", "quadratic_term", "clip_term", "residual")
        return [
            {"t": float(t), **{c: float(getattr(self, c)[j]) for c in cols}}
            for j, t in enumerate(self.times)
        ]


def _require_stored(record: TrajectoryRecord):
    if not record.has_stored_fields:
        raise ValueError("record has no stored fields/increments; run with store_fields=True")


def _pth_power_integral(values: np.ndarray, p: float, area: float) -> float:
    return float(np.sum(np.power(np.abs(values), p)) * area)


def ito_ledger(record: TrajectoryRecord, params: ModelParams, p: float = 2.0) -> ItoLedger:
    """Left-point Ito ledger for ||u||_p^p using the run's own increments.

    At p = 2 the dissipation over a step is integrated exactly along the
    semigroup flow of the bracket, so the residual is the discrete Ito
    isometry error alone. For p > 2 it is the left-point term
    p(p-1) dt sum |u|^{p-2} |grad u|^2, with the spectral gradient of u itself
    (not of |u|^{p/2}), so the residual also carries an O(dt) quadrature part.
    """
    _require_stored(record)
    if p < 2:
        raise ValueError(f"p must be >= 2, got {p}")
    grid = params.grid
    area = grid.cell_area
    dt = record.dt
    lam = spectrum(grid).eigenvalues
    heat = np.exp(-dt * lam)
    weights = parseval_weights(grid) * grid.area
    fields = record.fields
    n_steps = len(fields) - 1

    # rows: dissipation, chemo, source, martingale, quadratic, clip
    steps = np.zeros((6, n_steps))
    for j in range(n_steps):
        u = fields[j]
        dW = record.increments[j]
        ds = record.drift_scales[j]
        ns = record.noise_scales[j]
        a = analyze(u)
        weight = signed_power(u, p - 1.0)
        if ds and params.chi > 0:
            flux = synthesize(flux_div_coeffs(a, a / (lam + 1.0), grid, params.chi))
            steps[1, j] = -p * dt * ds * float(np.sum(weight * flux)) * area
        if ds and not params.source.is_zero:
            steps[2, j] = p * dt * ds * float(np.sum(weight * params.source.g(u))) * area
        if ns and params.noise.k_modes:
            sig = diffusion_arrays(u, params.noise, area)
            steps[3, j] = p * ns * float(np.dot(dW, (sig * weight[None]).sum(axis=(1, 2)))) * area
            steps[4, j] = (0.5 * p * (p - 1.0) * dt * ns * ns
                           * float(np.sum(sig * sig * np.power(np.abs(u), p - 2.0)[None])) * area)

        bracket = None
        if p == 2.0:
            bracket = a + forcing_coeffs(u, params, dt, dW, ds, ns, coeffs=a)
            steps[0, j] = float(np.sum(weights * bracket * bracket * (1.0 - heat * heat)))
        else:
            gx, gy = gradient_arrays(a, grid)
            steps[0, j] = (p * (p - 1.0) * dt
                           * float(np.sum(np.power(np.abs(u), p - 2.0) * (gx * gx + gy * gy))) * area)
        if record.clip_masses[j] > 0:
            if bracket is None:
                bracket = a + forcing_coeffs(u, params, dt, dW, ds, ns, coeffs=a)
            pre = synthesize(heat * bracket)
            steps[5, j] = (_pth_power_integral(fields[j + 1], p, area)
                           - _pth_power_integral(pre, p, area))

    cum = np.zeros((6, n_steps + 1))
    cum[:, 1:] = np.cumsum(steps, axis=1)
    lhs = np.array([_pth_power_integral(f, p, area) for f in fields])
    residual = lhs - lhs[0] + cum[0] - cum[1:].sum(axis=0)
    if not np.all(np.isfinite(residual)):
        raise ValueError("Ito ledger produced non-finite terms")
    return ItoLedger(
        p=p,
        times=np.asarray(record.times[: n_steps + 1]),
        lhs_norm=lhs,
        dissipation=cum[0],
        chemo_term=cum[1],
        source_term=cum[2],
        martingale_term=cum[3],
        quadratic_term=cum[4],
        clip_term=cum[5],
        residual=residual,
        crossing_excluded=record.status == RunStatus.STOPPED_AT_TAU,
    )


def mass_balance_residuals(record: TrajectoryRecord, params: ModelParams) -> np.ndarray:
    """|d int u - dt theta int g(u) - s sum_i (int sigma_i(u)) dW_i - clip| / (1 + |int u|) per step"""
    _require_stored(record)
    area = params.grid.cell_area
    fields = record.fields
    out = np.zeros(len(fields) - 1)
    for j in range(len(out)):
        u = fields[j]
        mass = float(u.sum() * area)
        change = float(fields[j + 1].sum() * area) - mass
        expected = record.clip_masses[j]
        ds = record.drift_scales[j]
        ns = record.noise_scales[j]
        if ds and not params.source.is_zero:
            expected += record.dt * ds * float(params.source.g(u).sum() * area)
        if ns and params.noise.k_modes:
            sig = diffusion_arrays(u, params.noise, area)
            expected += ns * float(np.dot(record.increments[j], sig.sum(axis=(1, 2)))) * area
        out[j] = abs(change - expected) / (1.0 + abs(mass))
    return out


def mass_balance_check(record: TrajectoryRecord, params: ModelParams) -> float:
    """Max relative per-step mass residual"""
    res = mass_balance_residuals(record, params)
    return float(res.max()) if res.size else 0.0


class DriftDominationReport(BaseModel):
    p0: float
    delta: float
    allowance: float
    # the measured drift is <= 0 once X = int u^(p0+1) exceeds this
    threshold: float
    times: List[float] = Field(default_factory=list)
    measured: List[float] = Field(default_factory=list)
    bound: List[float] = Field(default_factory=list)
    x_values: List[float] = Field(default_factory=list)
    ok: bool = True
    first_violation: Optional[float] = None


def drift_domination_check(record: TrajectoryRecord, params: ModelParams,
                           p0: float) -> DriftDominationReport:
    """Compare Q = (p0-1) chi X + p0 int u^(p0-1) g(u), X = int u^(p0+1),
    against -(delta/2) X + C with C from the Young split of c1 p0 int u^(p0-1).
    """
    _require_stored(record)
    constants = params.h2_constants
    if constants is None:
        raise ValueError("drift domination needs certified (c1, mu_tilde)")
    c1, mu_tilde = constants
    d = delta_of(p0, params.chi, mu_tilde)
    if d <= 0:
        raise ValueError(f"p0 = {p0} outside the window: delta = {d}")
    grid = params.grid
    area = grid.cell_area
    allowance = young_allowance(c1, p0, d, grid.area)
    report = DriftDominationReport(
        p0=p0, delta=d, allowance=allowance, threshold=2.0 * allowance / d
    )
    for t, u in zip(record.times, record.fields):
        x = float(np.sum(signed_power(u, p0 + 1.0)) * area)
        q = ((p0 - 1.0) * params.chi * x
             + p0 * float(np.sum(signed_power(u, p0 - 1.0) * params.source.g(u)) * area))
        bound = -0.5 * d * x + allowance
        report.times.append(float(t))
        report.measured.append(q)
        report.bound.append(bound)
        report.x_values.append(x)
        tol = 1e-10 * (abs(q) + abs(bound) + 1.0)
        if q > bound + tol and report.ok:
            report.ok = False
            report.first_violation = float(t)
    return report


def fit_order(dts: Sequence[float], errors: Sequence[float]) -> float:
    """Least-squares slope of log(error) against log(dt)"""
    dts = np.asarray(dts, dtype=np.float64)
    errors = np.asarray(errors, dtype=np.float64)
    if dts.size < 2 or dts.size != errors.size:
        raise ValueError("fit_order needs matching sequences of length >= 2")
    if np.any(dts <= 0) or np.any(errors <= 0):
        raise ValueError("fit_order needs positive dts and errors")
    slope, _ = np.polyfit(np.log(dts), np.log(errors), 1)
    return float(slope)


# Ensemble statistics


class EstimateReport(BaseModel):
    """Sample mean with a percentile bootstrap interval"""
    estimate: float
    ci_low: float
    ci_high: float
    n_paths: int
    level: float = DEFAULT_LEVEL
    horizon: Optional[float] = None
    warning: Optional[str] = None

    @property
    def ci_width(self) -> float:
        return self.ci_high - self.ci_low

    def overlaps(self, other: "EstimateReport") -> bool:
        return self.ci_low <= other.ci_high and other.ci_low <= self.ci_high


def bootstrap_mean_ci(values: Sequence[float], n_boot: int = DEFAULT_BOOTSTRAP,
                      level: float = DEFAULT_LEVEL, seed: int = 0) -> Tuple[float, float, float]:
    """(mean, low, high); deterministic for a given seed"""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("bootstrap needs at least one value")
    if not 0 < level < 1:
        raise ValueError(f"level must be in (0, 1), got {level}")
    if np.all(values == values[0]):
        v = float(values[0])
        return v, v, v
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, values.size, size=(n_boot, values.size))
    means = values[idx].mean(axis=1)
    alpha = 0.5 * (1.0 - level)
    low, high = np.percentile(means, [100.0 * alpha, 100.0 * (1.0 - alpha)])
    return float(values.mean()), float(low), float(high)


def _usable(records: Sequence[Optional[TrajectoryRecord]]) -> List[TrajectoryRecord]:
    out = [r for r in records if r is not None and r.times]
    if not out:
        raise ValueError("ensemble is empty")
    return out


def _lp_series(record: TrajectoryRecord, p: float) -> np.ndarray:
    for key, series in record.lp_norms.items():
        if math.isclose(key, p):
            return np.asarray(series)
    raise ValueError(f"L^{p:g} norm not recorded; add it to the integrator lp list")


def path_sup_moment(record: TrajectoryRecord, p: float, horizon: Optional[float] = None) -> float:
    """sup over recorded t <= horizon of ||u(t)||_p^p"""
    series = _lp_series(record, p) ** p
    if horizon is not None:
        mask = np.asarray(record.times) <= horizon + 0.5 * record.dt
        series = series[mask]
    return float(series.max())


def moment_estimator(records: Sequence[Optional[TrajectoryRecord]], p0: float,
                     horizon: Optional[float] = None,
                     window: Optional[Tuple[float, float]] = None,
                     n_boot: int = DEFAULT_BOOTSTRAP, level: float = DEFAULT_LEVEL,
                     seed: int = 0) -> EstimateReport:
    """E sup_t ||u||_p0^p0 over the ensemble, optionally up to ``horizon``"""
    paths = _usable(records)
    if len(paths) < 2:
        raise ValueError(f"moment estimator needs >= 2 paths, got {len(paths)}")
    if window is not None and not window[0] < p0 < window[1]:
        raise ValueError(f"p0 = {p0} outside window {window}")
    values = [path_sup_moment(r, p0, horizon) for r in paths]
    mean, low, high = bootstrap_mean_ci(values, n_boot, level, seed)
    return EstimateReport(estimate=mean, ci_low=low, ci_high=high, n_paths=len(paths),
                          level=level, horizon=horizon)


def gamma_moment_estimator(records: Sequence[Optional[TrajectoryRecord]], gamma: float,
                           window: Optional[float] = None,
                           n_boot: int = DEFAULT_BOOTSTRAP, level: float = DEFAULT_LEVEL,
                           seed: int = 0) -> EstimateReport:
    """E sup_t ||u||_inf^gamma; outside (0, window) the result carries a warning"""
    paths = _usable(records)
    warning = None
    if window is not None and not 0 < gamma < window:
        warning = f"gamma = {gamma} outside (0, {window:.6g})"
        logger.warning(warning)
    values = [r.running_sup[-1] ** gamma for r in paths]
    mean, low, high = bootstrap_mean_ci(values, n_boot, level, seed)
    return EstimateReport(estimate=mean, ci_low=low, ci_high=high, n_paths=len(paths),
                          level=level, warning=warning)


def sup_linf_estimator(records: Sequence[Optional[TrajectoryRecord]],
                       n_boot: int = DEFAULT_BOOTSTRAP, level: float = DEFAULT_LEVEL,
                       seed: int = 0) -> EstimateReport:
    """E sup_t ||u||_inf over the ensemble"""
    paths = _usable(records)
    if len(paths) < 2:
        raise ValueError(f"sup estimator needs >= 2 paths, got {len(paths)}")
    values = [r.running_sup[-1] for r in paths]
    mean, low, high = bootstrap_mean_ci(values, n_boot, level, seed)
    return EstimateReport(estimate=mean, ci_low=low, ci_high=high, n_paths=len(paths),
                          level=level)


class TailReport(BaseModel):
    R_grid: List[float]
    survival: List[float]
    exceedances: List[int]
    slope: Optional[float] = None
    fit_points: int = 0
    insufficient: bool = False
    n_paths: int = 0

    @property
    def eta_min(self) -> Optional[float]:
        """-slope when the decay is at least polynomial"""
        if self.slope is None or self.slope >= 0:
            return None
        return -self.slope


def tail_curve(samples: Sequence[float], R_grid: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    """(P(X >= R), exceedance counts) per R"""
    x = np.asarray(samples, dtype=np.float64)
    R = np.asarray(R_grid, dtype=np.float64)
    counts = (x[None, :] >= R[:, None]).sum(axis=1)
    return counts / x.size, counts


def fit_tail(samples: Sequence[float], R_grid: Sequence[float],
             min_exceedances: int = 5) -> TailReport:
    """Survival curve and log-log slope over the upper decade of R_grid"""
    R = np.asarray(R_grid, dtype=np.float64)
    if R.size < 2 or np.any(np.diff(R) <= 0) or R[0] <= 0:
        raise ValueError("R_grid must be positive and strictly increasing")
    survival, counts = tail_curve(samples, R)
    report = TailReport(
        R_grid=R.tolist(), survival=survival.tolist(),
        exceedances=[int(c) for c in counts], n_paths=len(samples),
    )
    use = (R >= R[-1] / 10.0) & (counts >= min_exceedances)
    report.fit_points = int(use.sum())
    if report.fit_points < 2:
        report.insufficient = True
        return report
    slope, _ = np.polyfit(np.log(R[use]), np.log(survival[use]), 1)
    report.slope = float(slope)
    return report


def tail_estimator(records: Sequence[Optional[TrajectoryRecord]], q: float,
                   R_grid: Sequence[float], min_exceedances: int = 5) -> TailReport:
    """Tail of sup_t ||u||_q^q across the ensemble"""
    paths = _usable(records)
    return fit_tail([path_sup_moment(r, q) for r in paths], R_grid, min_exceedances)
