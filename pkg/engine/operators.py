"""
Spectral functional calculus for the Neumann Laplacian A = -Delta.

Every operator is a multiplier on the cosine amplitudes of engine.fields;
gradients live on mixed sine/cosine bases internally and are returned nodally.
"""
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, Iterable, List, Optional, Sequence
import logging
import math

import numpy as np

from .fields import (
    Grid2D,
    ScalarField,
    VectorField,
    analyze,
    lp_norm,
    lp_values_norm,
    synthesize,
    w1p_norm,
)
from .types import INF

logger = logging.getLogger(__name__)

# Default epsilon in the (A4) rate t^(-1/2 - beta - eps)
DEFAULT_A4_EPS = 0.05


@dataclass(frozen=True)
class SpectrumInfo:
    """Neumann eigenvalues lambda[l, k] = (k pi/lx)^2 + (l pi/ly)^2"""
    grid: Grid2D
    kx: np.ndarray
    ky: np.ndarray
    eigenvalues: np.ndarray
    nu1: float
    dealias_x: np.ndarray = field(repr=False)
    dealias_y: np.ndarray = field(repr=False)


@lru_cache(maxsize=32)
def spectrum(grid: Grid2D) -> SpectrumInfo:
    """Spectrum tables, computed once per grid and shared read-only"""
    kx = np.arange(grid.nx) * np.pi / grid.lx
    ky = np.arange(grid.ny) * np.pi / grid.ly
    lam = ky[:, None] ** 2 + kx[None, :] ** 2
    nu1 = min(np.pi / grid.lx, np.pi / grid.ly) ** 2
    # 2/3 rule: keep modes strictly below 2N/3 on either basis
    dealias_x = np.arange(grid.nx) < (2.0 * grid.nx / 3.0)
    dealias_y = np.arange(grid.ny) < (2.0 * grid.ny / 3.0)
    for arr in (kx, ky, lam, dealias_x, dealias_y):
        arr.setflags(write=False)
    return SpectrumInfo(grid, kx, ky, lam, float(nu1), dealias_x, dealias_y)


def _check_finite(field: ScalarField, name: str = "field"):
    if field.diverged or not np.all(np.isfinite(field.values)):
        raise ValueError(f"{name} must be finite")


def apply_multiplier(field: ScalarField, multiplier: np.ndarray) -> ScalarField:
    """Multiply cosine amplitudes coefficient-wise"""
    _check_finite(field)
    return ScalarField(field.grid, synthesize(analyze(field.values) * multiplier))


def heat_multiplier(grid: Grid2D, t: float) -> np.ndarray:
    if t < 0:
        raise ValueError(f"Semigroup time must be >= 0, got {t}")
    return np.exp(-t * spectrum(grid).eigenvalues)


def heat_semigroup(field: ScalarField, t: float) -> ScalarField:
    """e^{-tA} field"""
    return apply_multiplier(field, heat_multiplier(field.grid, t))


def frac_power_multiplier(grid: Grid2D, beta: float, t: float) -> np.ndarray:
    if beta < 0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    if t < 0 or (beta > 0 and t <= 0):
        raise ValueError(f"Fractional semigroup needs t > 0, got t={t}")
    lam = spectrum(grid).eigenvalues
    return np.power(lam + 1.0, beta) * np.exp(-t * lam)


def frac_power_semigroup(field: ScalarField, beta: float, t: float) -> ScalarField:
    """(A+1)^beta e^{-tA} field"""
    return apply_multiplier(field, frac_power_multiplier(field.grid, beta, t))


def green_solve(u: ScalarField) -> ScalarField:
    """v = G*u, the Neumann solution of -Delta v + v = u"""
    _check_finite(u, "u")
    return apply_multiplier(u, 1.0 / (spectrum(u.grid).eigenvalues + 1.0))


def laplacian(field: ScalarField) -> ScalarField:
    return apply_multiplier(field, -spectrum(field.grid).eigenvalues)


def gradient_arrays(coeffs: np.ndarray, grid: Grid2D):
    """Nodal (d_x u, d_y u) from cosine amplitudes"""
    spec = spectrum(grid)
    bx = np.zeros_like(coeffs)
    bx[:, :-1] = -spec.kx[None, 1:] * coeffs[:, 1:]
    by = np.zeros_like(coeffs)
    by[:-1, :] = -spec.ky[1:, None] * coeffs[1:, :]
    gx = synthesize(bx, kind_x="sin", kind_y="cos")
    gy = synthesize(by, kind_x="cos", kind_y="sin")
    return gx, gy


def divergence_coeffs(fx: np.ndarray, fy: np.ndarray, grid: Grid2D,
                      dealias: bool = False) -> np.ndarray:
    """Cosine amplitudes of d_x fx + d_y fy; mode N of the sine bases drops out"""
    spec = spectrum(grid)
    bx = analyze(fx, kind_x="sin", kind_y="cos")
    by = analyze(fy, kind_x="cos", kind_y="sin")
    if dealias:
        # sine index m-1 holds mode m
        bx = bx * np.outer(spec.dealias_y, np.append(spec.dealias_x[1:], False))
        by = by * np.outer(np.append(spec.dealias_y[1:], False), spec.dealias_x)
    out = np.zeros_like(bx)
    out[:, 1:] += spec.kx[None, 1:] * bx[:, :-1]
    out[1:, :] += spec.ky[1:, None] * by[:-1, :]
    return out


def gradient(field: ScalarField) -> VectorField:
    """Exact spectral gradient of the cosine series, evaluated at cell centres"""
    _check_finite(field)
    gx, gy = gradient_arrays(analyze(field.values), field.grid)
    return VectorField(field.grid, gx, gy)


def divergence(vf: VectorField) -> ScalarField:
    """Spectral divergence, adjoint-consistent with gradient"""
    if not (np.all(np.isfinite(vf.x)) and np.all(np.isfinite(vf.y))):
        raise ValueError("Vector field must be finite")
    return ScalarField(vf.grid, synthesize(divergence_coeffs(vf.x, vf.y, vf.grid)))


def flux_div_coeffs(u_coeffs: np.ndarray, v_coeffs: np.ndarray, grid: Grid2D,
                    chi: float) -> np.ndarray:
    """Cosine amplitudes of div(chi u grad v), 2/3-rule dealiased"""
    spec = spectrum(grid)
    mask = np.outer(spec.dealias_y, spec.dealias_x)
    u_nodal = synthesize(u_coeffs * mask)
    gx, gy = gradient_arrays(v_coeffs * mask, grid)
    return divergence_coeffs(chi * u_nodal * gx, chi * u_nodal * gy, grid, dealias=True)


def chemotaxis_flux_div(u: ScalarField, v: ScalarField, chi: float) -> ScalarField:
    """div(chi u grad v), pseudo-spectral"""
    if chi <= 0:
        raise ValueError(f"chi must be positive, got {chi}")
    _check_finite(u, "u")
    _check_finite(v, "v")
    coeffs = flux_div_coeffs(analyze(u.values), analyze(v.values), u.grid, chi)
    return ScalarField(u.grid, synthesize(coeffs))


def yosida_apply(field: ScalarField, n: float) -> ScalarField:
    """R_n = n R(n, -A), multiplier n/(n + lambda)"""
    spec = spectrum(field.grid)
    if n <= spec.nu1:
        raise ValueError(f"Yosida parameter must exceed nu1={spec.nu1}, got {n}")
    return apply_multiplier(field, n / (n + spec.eigenvalues))


def yosida_convergence(field: ScalarField, n_values: Iterable[float]) -> List[float]:
    """||R_n u - u||_2 for each n"""
    return [lp_norm(yosida_apply(field, n) - field, 2) for n in n_values]


# Estimate certification


def _vector_lp(gx: np.ndarray, gy: np.ndarray, p: float, cell_area: float) -> float:
    return lp_values_norm(np.hypot(gx, gy), p, cell_area)


def semigroup_ratios(
    omega: ScalarField,
    t: float,
    p: float,
    beta: float,
    w: Optional[VectorField] = None,
    eps: float = DEFAULT_A4_EPS,
) -> Dict[str, float]:
    """Normalised left-hand sides of the semigroup estimates for one field.

    Each ratio divides out the permitted rate, so a uniformly bounded ratio
    over t is the testable content of the estimate.
    """
    if t <= 0:
        raise ValueError(f"t must be positive, got {t}")
    grid = omega.grid
    spec = spectrum(grid)
    area = grid.cell_area
    decay = math.exp(spec.nu1 * t)
    a = analyze(omega.values)
    heat = np.exp(-t * spec.eigenvalues)
    norm_omega = lp_norm(omega, p)

    ratios: Dict[str, float] = {}
    if norm_omega > 0:
        a1 = synthesize(a * np.power(spec.eigenvalues + 1.0, beta) * heat)
        ratios["A1"] = lp_values_norm(a1, p, area) * t ** beta * decay / norm_omega
        gx, gy = gradient_arrays(a * heat, grid)
        grad_norm = _vector_lp(gx, gy, p, area)
        ratios["A2"] = grad_norm * decay / ((1.0 + t ** -0.5) * norm_omega)
        if 2 <= p < INF:
            ratios["A3"] = grad_norm * decay / w1p_norm(omega, p)

    if w is not None:
        norm_w = _vector_lp(w.x, w.y, p, area)
        if norm_w > 0:
            d = divergence_coeffs(w.x, w.y, grid)
            if beta > 0:
                a4 = synthesize(d * np.power(spec.eigenvalues + 1.0, beta) * heat)
                ratios["A4"] = (lp_values_norm(a4, p, area) * t ** (0.5 + beta + eps)
                                * decay / norm_w)
            a5 = synthesize(d * heat)
            ratios["A5"] = lp_values_norm(a5, p, area) * t ** 0.5 * decay / norm_w
    return ratios


def random_band_limited(grid: Grid2D, rng: np.random.Generator, modes: int = 8) -> ScalarField:
    """Random cosine series on the lowest modes; the same draw on every grid"""
    coeffs = np.zeros(grid.shape)
    kk = min(modes, grid.nx)
    ll = min(modes, grid.ny)
    coeffs[:ll, :kk] = rng.standard_normal((modes, modes))[:ll, :kk]
    return ScalarField(grid, synthesize(coeffs))


def random_vector_field(grid: Grid2D, rng: np.random.Generator, modes: int = 8) -> VectorField:
    """Random flux on the lowest sine/cosine modes (vanishing normal component)"""
    bx = np.zeros(grid.shape)
    by = np.zeros(grid.shape)
    kk = min(modes, grid.nx)
    ll = min(modes, grid.ny)
    bx[:ll, :kk] = rng.standard_normal((modes, modes))[:ll, :kk]
    by[:ll, :kk] = rng.standard_normal((modes, modes))[:ll, :kk]
    return VectorField(
        grid,
        synthesize(bx, kind_x="sin", kind_y="cos"),
        synthesize(by, kind_x="cos", kind_y="sin"),
    )


@dataclass
class CertificationRow:
    estimate_id: str
    p: float
    beta: Optional[float]
    t: float
    max_ratio: float
    trials: int


@dataclass
class CertificationReport:
    """Max ratio per (estimate, p, beta, t) over random trials"""
    grid: Grid2D
    eps: float
    rows: List[CertificationRow] = field(default_factory=list)

    def max_ratio(self, estimate_id: str, p: float, beta: Optional[float] = None) -> float:
        """Max over the t-grid"""
        values = [
            r.max_ratio for r in self.rows
            if r.estimate_id == estimate_id and r.p == p and r.beta == beta
        ]
        if not values:
            raise KeyError(f"No rows for {estimate_id}, p={p}, beta={beta}")
        return max(values)

    def summary(self) -> Dict[tuple, float]:
        keys = {(r.estimate_id, r.p, r.beta) for r in self.rows}
        return {k: self.max_ratio(*k) for k in sorted(keys, key=str)}

    def all_finite(self) -> bool:
        return all(math.isfinite(r.max_ratio) for r in self.rows)


def certify_semigroup_estimates(
    grid: Grid2D,
    trials: int,
    t_grid: Sequence[float],
    p_list: Sequence[float],
    beta_list: Sequence[float],
    eps: float = DEFAULT_A4_EPS,
    seed: int = 0,
    modes: int = 8,
) -> CertificationReport:
    """Empirical certification of the heat-semigroup estimates.

    (A1) and (A4) are reported per beta; (A2), (A3), (A5) carry beta = None.
    """
    if trials < 1 or not t_grid or not p_list or not beta_list:
        raise ValueError("certification needs trials >= 1 and nonempty t/p/beta lists")
    rng = np.random.default_rng(seed)
    samples = [
        (random_band_limited(grid, rng, modes), random_vector_field(grid, rng, modes))
        for _ in range(trials)
    ]
    best: Dict[tuple, float] = {}
    for omega, w in samples:
        for t in t_grid:
            for p in p_list:
                for beta in beta_list:
                    for est, ratio in semigroup_ratios(omega, t, p, beta, w, eps).items():
                        key = (est, p, beta if est in ("A1", "A4") else None, t)
                        best[key] = max(best.get(key, 0.0), ratio)

    report = CertificationReport(grid=grid, eps=eps)
    for (est, p, beta, t), ratio in sorted(best.items(), key=lambda kv: str(kv[0])):
        report.rows.append(CertificationRow(est, p, beta, t, ratio, trials))
    logger.info("certified %d estimate cells on %dx%d grid", len(report.rows), grid.nx, grid.ny)
    return report
