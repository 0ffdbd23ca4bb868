"""
Brownian increments and diffusion terms.

Increments come from numpy's counter-based Philox generator keyed by
(master_seed, path_index) with the step index in the second counter word, so
any increment is a pure function of (seed, path, step, mode) and does not
depend on scheduling.
"""
from dataclasses import dataclass
from typing import List, Sequence, Union
import math

import numpy as np

from .fields import ScalarField, analyze, lp_values_norm, synthesize
from .model import LinearNoiseSpec, NoiseSpec, NonlinearNoiseSpec
from .operators import spectrum

_U64 = (1 << 64) - 1


@dataclass(frozen=True)
class SeedContext:
    master_seed: int
    path_index: int = 0

    def for_path(self, path_index: int) -> "SeedContext":
        return SeedContext(self.master_seed, path_index)


@dataclass(frozen=True)
class WienerIncrement:
    dt: float
    dWs: np.ndarray

    @property
    def k_modes(self) -> int:
        return int(self.dWs.shape[0])


def _generator(seed_ctx: SeedContext, fine_index: int) -> np.random.Generator:
    key = ((seed_ctx.master_seed & _U64) << 64) | (seed_ctx.path_index & _U64)
    # low counter word is consumed by the draws; the step lives in word 1
    counter = (fine_index & _U64) << 64
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def sample_increment(seed_ctx: SeedContext, step_index: int, dt: float, k_modes: int,
                     substeps: int = 1) -> WienerIncrement:
    """Increment over [t_j, t_j + dt] for every mode.

    With ``substeps = s`` the increment is the sum of s draws keyed at the fine
    indices j*s .. j*s + s - 1, each of variance dt/s, so runs at dt and dt/s
    see the same Brownian path.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if substeps < 1:
        raise ValueError(f"substeps must be >= 1, got {substeps}")
    if k_modes == 0:
        return WienerIncrement(dt, np.zeros(0))
    scale = math.sqrt(dt / substeps)
    total = np.zeros(k_modes)
    for i in range(substeps):
        total += _generator(seed_ctx, step_index * substeps + i).standard_normal(k_modes)
    return WienerIncrement(dt, total * scale)


def linear_diffusion_arrays(values: np.ndarray, spec: LinearNoiseSpec) -> np.ndarray:
    """Stacked kappa_i h(u), shape (k_modes, ny, nx)"""
    if not spec.certified:
        raise ValueError("Linear noise spec has not been certified by validate_H1")
    return spec.sigma(values)


def nonlinear_diffusion_arrays(values: np.ndarray, spec: NonlinearNoiseSpec,
                               cell_area: float) -> np.ndarray:
    """Stacked b_i ||u||_q^r u"""
    if not spec.certified:
        raise ValueError("Nonlinear noise spec has not been certified by validate_A1_A2")
    intensity = lp_values_norm(values, spec.q, cell_area) ** spec.r
    return np.asarray(spec.bs, dtype=np.float64)[:, None, None] * (intensity * values)[None]


def diffusion_arrays(values: np.ndarray, spec: NoiseSpec, cell_area: float) -> np.ndarray:
    if isinstance(spec, NonlinearNoiseSpec):
        return nonlinear_diffusion_arrays(values, spec, cell_area)
    return linear_diffusion_arrays(values, spec)


def diffusion_fields(u: ScalarField, spec: LinearNoiseSpec) -> List[ScalarField]:
    """sigma_i(u) = kappa_i h(u(x)) per mode"""
    return [ScalarField(u.grid, a) for a in linear_diffusion_arrays(u.values, spec)]


def nonlinear_diffusion_fields(u: ScalarField, spec: NonlinearNoiseSpec) -> List[ScalarField]:
    """b_i ||u||_q^r u per mode"""
    return [
        ScalarField(u.grid, a)
        for a in nonlinear_diffusion_arrays(u.values, spec, u.grid.cell_area)
    ]


HPath = Union[np.ndarray, Sequence[Sequence[ScalarField]]]


def _stack_path(h_path: HPath) -> np.ndarray:
    if isinstance(h_path, np.ndarray):
        return h_path
    return np.array([[f.values for f in fields] for fields in h_path], dtype=np.float64)


def _path_grid(h_path: HPath):
    if isinstance(h_path, np.ndarray):
        raise ValueError("grid is required when the h path is a raw array")
    return h_path[0][0].grid


def _stack_increments(increments) -> np.ndarray:
    return np.array(
        [inc.dWs if isinstance(inc, WienerIncrement) else inc for inc in increments],
        dtype=np.float64,
    )


def _kicks(h: np.ndarray, dW: np.ndarray) -> np.ndarray:
    """sum_i h_i(t_j) dW_i,j per step, shape (J, ny, nx)"""
    if h.shape[:2] != dW.shape[:2]:
        raise ValueError(f"h path {h.shape[:2]} and increments {dW.shape[:2]} disagree")
    return np.einsum("jk,jkyx->jyx", dW, h)


def stochastic_convolution(h_path: HPath, increments, dt: float, t_index: int,
                           grid=None) -> ScalarField:
    """Left-point Ito sum  sum_{j < t_index} e^{-(t - t_j)A} sum_i h_i(t_j) dW_i,j"""
    grid = grid or _path_grid(h_path)
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    h = _stack_path(h_path)
    dW = _stack_increments(increments)
    if not 0 <= t_index <= h.shape[0]:
        raise IndexError(f"t_index {t_index} outside [0, {h.shape[0]}]")
    if t_index == 0:
        return ScalarField.constant(grid, 0.0)
    coeffs = analyze(_kicks(h[:t_index], dW[:t_index]))
    lags = (t_index - np.arange(t_index)) * dt
    weights = np.exp(-lags[:, None, None] * spectrum(grid).eigenvalues[None])
    return ScalarField(grid, synthesize((coeffs * weights).sum(axis=0)))


def stochastic_convolution_path(h_path: HPath, increments, dt: float,
                                grid=None) -> List[ScalarField]:
    """M_0 = 0, M_{j+1} = e^{-dt A}(M_j + sum_i h_i(t_j) dW_i,j)"""
    grid = grid or _path_grid(h_path)
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    kicks = analyze(_kicks(_stack_path(h_path), _stack_increments(increments)))
    heat = np.exp(-dt * spectrum(grid).eigenvalues)
    m = np.zeros(grid.shape)
    out = [ScalarField(grid, synthesize(m))]
    for kick in kicks:
        m = heat * (m + kick)
        out.append(ScalarField(grid, synthesize(m)))
    return out
