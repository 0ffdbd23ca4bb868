"""
Picard iteration for the cutoff mild equation on one frozen noise path.

Phi evaluates the discrete Duhamel sum directly. Its fixed point is the
exponential Euler trajectory driven by the same increments, so the stepper and
the iteration can be compared at every grid time.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Union
import logging

import numpy as np

from .fields import ScalarField, analyze, synthesize
from .integrator import CutoffSpec, step_count, forcing_coeffs, noise_is_localized, step_scales
from .model import ModelParams
from .noise import SeedContext, WienerIncrement, sample_increment
from .operators import spectrum

logger = logging.getLogger(__name__)

Trajectory = Union[np.ndarray, Sequence[ScalarField], Sequence[np.ndarray]]

PATHWISE_NOTE = (
    "contraction measured pathwise on one frozen noise path; "
    "the S_T norm averages over paths"
)


def _as_stack(u_traj: Trajectory) -> np.ndarray:
    """(J+1, ny, nx) stack from an array, ScalarFields or stored nodal arrays"""
    if isinstance(u_traj, np.ndarray):
        return u_traj
    return np.array([getattr(u, "values", u) for u in u_traj], dtype=np.float64)


def running_sup_series(stack: np.ndarray) -> np.ndarray:
    """max_{l <= i} ||u(t_l)||_inf for each i"""
    return np.maximum.accumulate(np.abs(stack).max(axis=(1, 2)))


def frozen_increments(seed_ctx: SeedContext, n_steps: int, dt: float, k_modes: int,
                      substeps: int = 1) -> np.ndarray:
    """Increments for steps 0..n_steps-1, shape (n_steps, k_modes)"""
    out = np.zeros((n_steps, k_modes))
    for j in range(n_steps):
        out[j] = sample_increment(seed_ctx, j, dt, k_modes, substeps).dWs
    return out


def _increment_matrix(frozen_path, k_modes: int) -> np.ndarray:
    out = np.zeros((len(frozen_path), k_modes))
    for i, inc in enumerate(frozen_path):
        out[i] = inc.dWs if isinstance(inc, WienerIncrement) else inc
    return out


def phi_apply(u_traj: Trajectory, params: ModelParams, cutoff: CutoffSpec,
              frozen_path, dt: float, localize_noise: Optional[bool] = None) -> np.ndarray:
    """Phi(u)(t_j) = e^{-t_j A} u0 + sum_{i<j} e^{-(t_j - t_i) A} F_i(u).

    F_i collects the theta-scaled drift times dt and the noise kick evaluated
    on u(t_i), with theta taken at the running sup of the input trajectory.
    Returns the output trajectory as an array of shape (J+1, ny, nx).
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    stack = _as_stack(u_traj)
    n_steps = stack.shape[0] - 1
    dW = _increment_matrix(frozen_path, params.noise.k_modes)
    if dW.shape[0] < n_steps:
        raise ValueError(
            f"Frozen path covers {dW.shape[0]} steps, trajectory needs {n_steps}"
        )
    if not np.all(np.isfinite(stack)):
        raise ValueError("Input trajectory has non-finite values")

    grid = params.grid
    localize = noise_is_localized(params, localize_noise)
    rs = running_sup_series(stack)
    forcing = np.empty((n_steps,) + grid.shape)
    for i in range(n_steps):
        drift_scale, noise_scale = step_scales(params, cutoff, float(rs[i]), localize)
        forcing[i] = forcing_coeffs(stack[i], params, dt, dW[i], drift_scale, noise_scale)

    lam = spectrum(grid).eigenvalues
    # powers[k] = e^{-k dt A}
    powers = np.exp(-(np.arange(n_steps + 1) * dt)[:, None, None] * lam[None])
    a0 = analyze(params.u0.values)
    out = np.empty_like(stack)
    out[0] = params.u0.values
    for j in range(1, n_steps + 1):
        acc = powers[j] * a0 + np.einsum("iyx,iyx->yx", powers[j:0:-1], forcing[:j])
        out[j] = synthesize(acc)
    if not np.all(np.isfinite(out)):
        raise ValueError("Phi produced non-finite values")
    return out


@dataclass
class PicardReport:
    T: float
    dt: float
    m: float
    diffs: List[float] = field(default_factory=list)
    converged: bool = False
    tol: float = 0.0
    solution: Optional[np.ndarray] = None
    note: str = PATHWISE_NOTE

    @property
    def iterations(self) -> int:
        return len(self.diffs)

    @property
    def ratios(self) -> List[float]:
        """d_{k+1}/d_k while d_k > 0"""
        return [b / a for a, b in zip(self.diffs, self.diffs[1:]) if a > 0]

    @property
    def max_ratio(self) -> Optional[float]:
        return max(self.ratios) if self.ratios else None

    def rows(self) -> List[Dict[str, object]]:
        """CSV rows: iter, diff_sup, ratio (empty for the first iterate)"""
        out = []
        for k, d in enumerate(self.diffs):
            prev = self.diffs[k - 1] if k else 0.0
            out.append({
                "iter": k,
                "diff_sup": d,
                "ratio": d / prev if k and prev > 0 else "",
            })
        return out

    def summary(self) -> Dict[str, object]:
        return {
            "T": self.T,
            "dt": self.dt,
            "m": self.m,
            "iterations": self.iterations,
            "converged": self.converged,
            "tol": self.tol,
            "max_ratio": self.max_ratio,
            "final_diff": self.diffs[-1] if self.diffs else None,
            "note": self.note,
        }


def picard_solve(params: ModelParams, cutoff: CutoffSpec, T: float, dt: float,
                 seed_ctx: SeedContext, tol: float = 1e-9, max_iter: int = 20,
                 localize_noise: Optional[bool] = None, substeps: int = 1) -> PicardReport:
    """Iterate u^{k+1} = Phi(u^k) from the constant-in-time u0 trajectory.

    Hitting max_iter is reported through ``converged = False``, never raised.
    """
    if max_iter < 1:
        raise ValueError(f"max_iter must be >= 1, got {max_iter}")
    n_steps = step_count(T, dt)
    dW = frozen_increments(seed_ctx, n_steps, dt, params.noise.k_modes, substeps)
    u = np.broadcast_to(params.u0.values, (n_steps + 1,) + params.grid.shape).copy()

    report = PicardReport(T=T, dt=dt, m=cutoff.m, tol=tol)
    for k in range(max_iter):
        new = phi_apply(u, params, cutoff, dW, dt, localize_noise)
        d = float(np.abs(new - u).max())
        report.diffs.append(d)
        u = new
        logger.debug("picard iter %d: diff %.3e", k, d)
        if d < tol:
            report.converged = True
            break
    report.solution = u
    if not report.converged:
        logger.warning("picard: no convergence in %d iterations (last diff %.3e)",
                       max_iter, report.diffs[-1])
    return report


def picard_sweep(params: ModelParams, T_values: Sequence[float], m_values: Sequence[float],
                 dt: float, seed_ctx: SeedContext, tol: float = 1e-9,
                 max_iter: int = 20) -> List[PicardReport]:
    """One report per (T, m) cell, T-major"""
    reports = []
    for T in T_values:
        for m in m_values:
            reports.append(
                picard_solve(params, CutoffSpec(m), T, dt, seed_ctx, tol, max_iter)
            )
    return reports


def sweep_rows(reports: Sequence[PicardReport]) -> List[Dict[str, object]]:
    """Sweep CSV rows: T, m, iter, diff_sup, ratio"""
    rows = []
    for rep in reports:
        for row in rep.rows():
            rows.append({"T": rep.T, "m": rep.m, **row})
    return rows
