"""
Mild-form time stepping for the linear-noise and norm-nonlinear-noise systems.

One step is exponential Euler-Maruyama:

    u+ = e^{-dt A} [ u + dt * theta * (-div(chi u grad G u) + g(u)) + s * sum_i sigma_i(u) dW_i ]

with theta the cutoff on the running sup norm (1 without a cutoff) and s the
noise scale (theta for the localised nonlinear-noise equation, 1 otherwise).
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple
import logging
import math

import numpy as np

from .fields import ScalarField, analyze, lp_values_norm, synthesize
from .model import ModelParams, NonlinearNoiseSpec
from .noise import SeedContext, WienerIncrement, diffusion_arrays, sample_increment
from .operators import flux_div_coeffs, spectrum
from .types import DEFAULT_CEILING, INF, NonnegPolicy, RunStatus

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CutoffSpec:
    """theta_m(x) = theta(x/m) with the quintic C^2 profile"""
    m: float

    def __post_init__(self):
        if not self.m > 0:
            raise ValueError(f"Cutoff threshold must be positive, got {self.m}")


def theta(r):
    """1 on [0,1], 1 - S(r-1) on [1,2] with S(x) = 6x^5 - 15x^4 + 10x^3, 0 beyond"""
    x = np.clip(np.asarray(r, dtype=np.float64) - 1.0, 0.0, 1.0)
    out = 1.0 - x * x * x * (x * (6.0 * x - 15.0) + 10.0)
    return float(out) if out.ndim == 0 else out


def theta_m(x: float, spec: CutoffSpec) -> float:
    if x < 0:
        raise ValueError(f"theta_m needs x >= 0, got {x}")
    return theta(x / spec.m)


@dataclass
class IntegratorOptions:
    nonneg: NonnegPolicy = NonnegPolicy.CLIP
    ceiling: float = DEFAULT_CEILING
    lp_list: Tuple[float, ...] = (2.0,)
    cutoff: Optional[CutoffSpec] = None
    # stop at the first grid time with sup norm >= stop_at
    stop_at: Optional[float] = None
    tau_thresholds: Tuple[float, ...] = ()
    snapshot_times: Tuple[float, ...] = ()
    store_fields: bool = False
    substeps: int = 1
    # None: localise noise only for the nonlinear-noise system
    localize_noise: Optional[bool] = None


def noise_is_localized(params: ModelParams, localize_noise: Optional[bool] = None) -> bool:
    """Whether the cutoff scales the noise; by default only for nonlinear noise"""
    if localize_noise is not None:
        return localize_noise
    return isinstance(params.noise, NonlinearNoiseSpec)


def _noise_is_localized(params: ModelParams, options: IntegratorOptions) -> bool:
    return noise_is_localized(params, options.localize_noise)


def forcing_coeffs(values: np.ndarray, params: ModelParams, dt: float, dWs: np.ndarray,
                   drift_scale: float = 1.0, noise_scale: float = 1.0,
                   coeffs: Optional[np.ndarray] = None) -> np.ndarray:
    """Cosine amplitudes of dt*drift_scale*(-div(chi u grad G u) + g(u)) + noise_scale*sum sigma_i dW_i"""
    grid = params.grid
    a = analyze(values) if coeffs is None else coeffs
    out = np.zeros_like(a)
    nodal = np.zeros_like(values)
    if drift_scale != 0.0:
        if params.chi > 0:
            v_coeffs = a / (spectrum(grid).eigenvalues + 1.0)
            out -= (dt * drift_scale) * flux_div_coeffs(a, v_coeffs, grid, params.chi)
        if not params.source.is_zero:
            nodal += (dt * drift_scale) * params.source.g(values)
    if noise_scale != 0.0 and params.noise.k_modes and np.any(dWs):
        sig = diffusion_arrays(values, params.noise, grid.cell_area)
        nodal += noise_scale * np.tensordot(dWs, sig, axes=1)
    if np.any(nodal):
        out += analyze(nodal)
    return out


def bracket_coeffs(values: np.ndarray, params: ModelParams, dt: float, dWs: np.ndarray,
                   drift_scale: float = 1.0, noise_scale: float = 1.0) -> np.ndarray:
    """Cosine amplitudes of the bracket the semigroup is applied to"""
    a = analyze(values)
    return a + forcing_coeffs(values, params, dt, dWs, drift_scale, noise_scale, coeffs=a)


def _advance(values: np.ndarray, params: ModelParams, dt: float, dWs: np.ndarray,
             drift_scale: float, noise_scale: float, ceiling: float) -> ScalarField:
    grid = params.grid
    with np.errstate(over="ignore", invalid="ignore"):
        b = bracket_coeffs(values, params, dt, dWs, drift_scale, noise_scale)
        new = synthesize(np.exp(-dt * spectrum(grid).eigenvalues) * b)
    if not np.all(np.isfinite(new)) or np.abs(new).max() > ceiling:
        return ScalarField(grid, new, diverged=True)
    return ScalarField(grid, new)


def _dws(increment: Optional[WienerIncrement], params: ModelParams) -> np.ndarray:
    if increment is None:
        return np.zeros(params.noise.k_modes)
    if increment.k_modes != params.noise.k_modes:
        raise ValueError(
            f"Increment has {increment.k_modes} modes, noise has {params.noise.k_modes}"
        )
    return increment.dWs


def step_mild(u: ScalarField, params: ModelParams, dt: float,
              increment: Optional[WienerIncrement] = None,
              options: Optional[IntegratorOptions] = None) -> ScalarField:
    """One exponential Euler-Maruyama step; the result carries ``diverged``"""
    options = options or IntegratorOptions()
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if u.diverged or not np.all(np.isfinite(u.values)):
        raise ValueError("Cannot step a non-finite field")
    return _advance(u.values, params, dt, _dws(increment, params), 1.0, 1.0, options.ceiling)


def step_scales(params: ModelParams, cutoff: Optional[CutoffSpec], running_sup: float,
                localize_noise: bool) -> Tuple[float, float]:
    """(drift_scale, noise_scale) for the current running sup"""
    if cutoff is None:
        return 1.0, 1.0
    th = theta_m(running_sup, cutoff)
    return th, (th if localize_noise else 1.0)


def step_mild_cutoff(u: ScalarField, params: ModelParams, dt: float,
                     increment: Optional[WienerIncrement], cutoff: CutoffSpec,
                     running_sup: float,
                     options: Optional[IntegratorOptions] = None) -> ScalarField:
    """step_mild with drift scaled by theta_m(running_sup).

    The noise is scaled too for the nonlinear-noise system, and left alone for
    the linear-noise system.
    """
    options = options or IntegratorOptions()
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    drift_scale, noise_scale = step_scales(
        params, cutoff, running_sup, _noise_is_localized(params, options)
    )
    return _advance(u.values, params, dt, _dws(increment, params),
                    drift_scale, noise_scale, options.ceiling)


@dataclass
class TrajectoryRecord:
    """Norm time series of one path plus optional stored fields"""
    dt: float
    times: List[float] = field(default_factory=list)
    sup_norms: List[float] = field(default_factory=list)
    lp_norms: Dict[float, List[float]] = field(default_factory=dict)
    masses: List[float] = field(default_factory=list)
    min_values: List[float] = field(default_factory=list)
    running_sup: List[float] = field(default_factory=list)
    tau_m_hits: Dict[float, Optional[float]] = field(default_factory=dict)
    status: RunStatus = RunStatus.COMPLETED
    stop_threshold: Optional[float] = None
    diverged_at: Optional[float] = None
    error: Optional[str] = None
    snapshots: Dict[float, ScalarField] = field(default_factory=dict)
    final_values: Optional[np.ndarray] = None
    # per step j (from t_j to t_j+1)
    drift_scales: List[float] = field(default_factory=list)
    noise_scales: List[float] = field(default_factory=list)
    clip_masses: List[float] = field(default_factory=list)
    # stored on request: fields[0..J], increments[0..J-1]
    fields: Optional[List[np.ndarray]] = None
    increments: Optional[List[np.ndarray]] = None

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    @property
    def has_stored_fields(self) -> bool:
        return self.fields is not None and self.increments is not None

    def observe(self, t: float, u: ScalarField, lp_list: Sequence[float], pre_clip_min: float):
        sup = u.sup()
        self.times.append(t)
        self.sup_norms.append(sup)
        for p in lp_list:
            self.lp_norms.setdefault(p, []).append(
                lp_values_norm(u.values, p, u.grid.cell_area)
            )
        self.masses.append(u.integral())
        self.min_values.append(pre_clip_min)
        prev = self.running_sup[-1] if self.running_sup else 0.0
        self.running_sup.append(max(prev, sup))
        for m, hit in self.tau_m_hits.items():
            if hit is None and sup >= m:
                self.tau_m_hits[m] = t

    def series_rows(self) -> List[Dict[str, float]]:
        """One row per grid time: t, sup_norm, mass, min_value, L^p columns"""
        rows = []
        for j, t in enumerate(self.times):
            row = {
                "t": t,
                "sup_norm": self.sup_norms[j],
                "mass": self.masses[j],
                "min_value": self.min_values[j],
            }
            for p, series in self.lp_norms.items():
                row[f"L{p:g}"] = series[j]
            rows.append(row)
        return rows

    def summary(self) -> Dict[str, object]:
        return {
            "status": self.status.value,
            "final_time": self.times[-1] if self.times else None,
            "final_sup": self.sup_norms[-1] if self.sup_norms else None,
            "max_sup": self.running_sup[-1] if self.running_sup else None,
            "min_value": min(self.min_values) if self.min_values else None,
            "diverged_at": self.diverged_at,
            "tau_m_hits": {f"{m:g}": hit for m, hit in self.tau_m_hits.items()},
            "error": self.error,
        }


def detect_stopping(record: TrajectoryRecord, m: float) -> Optional[int]:
    """Index of the first grid time with sup norm >= m, or None"""
    for j, sup in enumerate(record.sup_norms):
        if sup >= m:
            return j
    return None


def step_count(T: float, dt: float) -> int:
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-9 * max(T, 1.0):
        raise ValueError(f"T = {T} is not a positive multiple of dt = {dt}")
    return n


def run_trajectory(params: ModelParams, T: float, dt: float, seed_ctx: SeedContext,
                   options: Optional[IntegratorOptions] = None) -> TrajectoryRecord:
    """Step from u0 until T, divergence or the configured stopping threshold"""
    options = options or IntegratorOptions()
    if not (T > 0 and dt > 0):
        raise ValueError(f"T and dt must be positive, got T={T}, dt={dt}")
    n_steps = step_count(T, dt)
    grid = params.grid
    localize = _noise_is_localized(params, options)
    clip = options.nonneg == NonnegPolicy.CLIP
    k_modes = params.noise.k_modes

    record = TrajectoryRecord(dt=dt, stop_threshold=options.stop_at)
    record.tau_m_hits = {float(m): None for m in options.tau_thresholds}
    if options.store_fields:
        record.fields, record.increments = [], []
    pending_snapshots = sorted(options.snapshot_times)

    u = params.u0
    record.observe(0.0, u, options.lp_list, u.min())

    def take_snapshots(t: float, u: ScalarField):
        while pending_snapshots and pending_snapshots[0] <= t + 0.5 * dt:
            record.snapshots[pending_snapshots.pop(0)] = u

    take_snapshots(0.0, u)
    if options.store_fields:
        record.fields.append(u.values)

    for j in range(n_steps):
        if options.stop_at is not None and record.sup_norms[-1] >= options.stop_at:
            record.status = RunStatus.STOPPED_AT_TAU
            break
        drift_scale, noise_scale = step_scales(
            params, options.cutoff, record.running_sup[-1], localize
        )
        if k_modes:
            dWs = sample_increment(seed_ctx, j, dt, k_modes, options.substeps).dWs
        else:
            dWs = np.zeros(0)
        new = _advance(u.values, params, dt, dWs, drift_scale, noise_scale, options.ceiling)
        t = (j + 1) * dt
        if new.diverged:
            record.status = RunStatus.DIVERGED
            record.diverged_at = t
            logger.info("path %d diverged at t=%.6g", seed_ctx.path_index, t)
            break

        pre_min = new.min()
        clip_mass = 0.0
        if clip and pre_min < 0:
            clipped = np.maximum(new.values, 0.0)
            clip_mass = float((clipped - new.values).sum() * grid.cell_area)
            new = ScalarField(grid, clipped)

        record.drift_scales.append(drift_scale)
        record.noise_scales.append(noise_scale)
        record.clip_masses.append(clip_mass)
        if options.store_fields:
            record.fields.append(new.values)
            record.increments.append(dWs)
        u = new
        record.observe(t, u, options.lp_list, pre_min)
        take_snapshots(t, u)
    else:
        if options.stop_at is not None and record.sup_norms[-1] >= options.stop_at:
            record.status = RunStatus.STOPPED_AT_TAU

    record.final_values = u.values
    return record
