"""
Grid and field containers on an axis-aligned rectangle.

Nodes sit at cell centres x_i = (i + 1/2) dx, y_j = (j + 1/2) dy. Arrays are
stored y-major with shape (ny, nx), so ``values[j, i]`` is the value at
(x_i, y_j) and a C-order flatten is the KSF1 row-major layout.

Spectral coefficients use the amplitude normalisation

    u(x_i, y_j) = sum_{k,l} a[l, k] cos(k pi x_i / lx) cos(l pi y_j / ly)

so a constant field c has a[0, 0] = c and cos(pi x / lx) has a[0, 1] = 1.
Under this normalisation Parseval reads

    ||u||_2^2 = |O| * sum_{k,l} w_k w_l a[l, k]^2,   w_0 = 1, w_k = 1/2.
"""
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Tuple, Union
import math
import struct

import numpy as np
from scipy import fft

from .types import INF, SNAPSHOT_MAGIC

MIN_NODES = 4


@dataclass(frozen=True)
class Grid2D:
    """Uniform cell-centred grid on [0, lx] x [0, ly]"""
    nx: int
    ny: int
    lx: float
    ly: float
    dx: float = field(init=False)
    dy: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "dx", self.lx / self.nx)
        object.__setattr__(self, "dy", self.ly / self.ny)

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def area(self) -> float:
        return self.lx * self.ly

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy

    @cached_property
    def x(self) -> np.ndarray:
        return (np.arange(self.nx) + 0.5) * self.dx

    @cached_property
    def y(self) -> np.ndarray:
        return (np.arange(self.ny) + 0.5) * self.dy

    @cached_property
    def mesh(self) -> Tuple[np.ndarray, np.ndarray]:
        """(X, Y) arrays of shape (ny, nx)"""
        return np.meshgrid(self.x, self.y, indexing="xy")


def build_grid(nx: int, ny: int, lx: float, ly: float) -> Grid2D:
    """Build a grid, rejecting degenerate dimensions"""
    if int(nx) != nx or int(ny) != ny:
        raise ValueError(f"Node counts must be integers, got nx={nx}, ny={ny}")
    if nx < MIN_NODES or ny < MIN_NODES:
        raise ValueError(f"Grid too small: nx={nx}, ny={ny} (need >= {MIN_NODES})")
    if not (lx > 0 and ly > 0) or not (math.isfinite(lx) and math.isfinite(ly)):
        raise ValueError(f"Side lengths must be positive, got lx={lx}, ly={ly}")
    return Grid2D(int(nx), int(ny), float(lx), float(ly))


class ScalarField:
    """Nodal values of a scalar on a grid; immutable once built"""

    def __init__(self, grid: Grid2D, values, diverged: bool = False):
        arr = np.array(values, dtype=np.float64)
        if arr.size != grid.nx * grid.ny:
            raise ValueError(
                f"Field has {arr.size} values, grid needs {grid.nx * grid.ny}"
            )
        arr = arr.reshape(grid.shape)
        if not diverged and not np.all(np.isfinite(arr)):
            raise ValueError("Field contains non-finite values")
        arr.setflags(write=False)
        self.grid = grid
        self.values = arr
        self.diverged = diverged

    @classmethod
    def constant(cls, grid: Grid2D, c: float) -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(c)))

    @classmethod
    def from_function(cls, grid: Grid2D, func) -> "ScalarField":
        """Sample func(X, Y) at the cell centres"""
        X, Y = grid.mesh
        return cls(grid, np.broadcast_to(func(X, Y), grid.shape))

    @classmethod
    def cosine_mode(cls, grid: Grid2D, k: int, l: int, amplitude: float = 1.0) -> "ScalarField":
        """amplitude * cos(k pi x / lx) cos(l pi y / ly)"""
        X, Y = grid.mesh
        return cls(
            grid,
            amplitude * np.cos(k * np.pi * X / grid.lx) * np.cos(l * np.pi * Y / grid.ly),
        )

    def with_values(self, values) -> "ScalarField":
        return ScalarField(self.grid, values)

    def __add__(self, other: "ScalarField") -> "ScalarField":
        return ScalarField(self.grid, self.values + other.values)

    def __sub__(self, other: "ScalarField") -> "ScalarField":
        return ScalarField(self.grid, self.values - other.values)

    def __mul__(self, c: float) -> "ScalarField":
        return ScalarField(self.grid, self.values * c)

    __rmul__ = __mul__

    def integral(self) -> float:
        """Cell-average quadrature of the field"""
        return float(self.values.sum() * self.grid.cell_area)

    def min(self) -> float:
        return float(self.values.min())

    def sup(self) -> float:
        return float(np.abs(self.values).max())


@dataclass(frozen=True)
class SpectralCoeffs:
    """Cosine amplitudes; ``coeffs[l, k]`` multiplies cos(k pi x/lx) cos(l pi y/ly)"""
    grid: Grid2D
    coeffs: np.ndarray

    def mode(self, k: int, l: int) -> float:
        return float(self.coeffs[l, k])


class VectorField:
    """Two nodal components on the same grid"""

    def __init__(self, grid: Grid2D, x, y):
        x = np.asarray(x, dtype=np.float64).reshape(grid.shape)
        y = np.asarray(y, dtype=np.float64).reshape(grid.shape)
        self.grid = grid
        self.x = x
        self.y = y

    def __add__(self, other: "VectorField") -> "VectorField":
        return VectorField(self.grid, self.x + other.x, self.y + other.y)

    def scale(self, values) -> "VectorField":
        """Pointwise multiplication by a nodal array or scalar"""
        return VectorField(self.grid, self.x * values, self.y * values)


# Per-axis transform weights. Unnormalised DCT-II of cos(k pi (n+1/2)/N) is
# 2N at k = 0 and N otherwise; DST-II of sin(m pi (n+1/2)/N) is N for m < N
# and 2N at m = N.

def _cos_weights(n: int) -> np.ndarray:
    w = np.full(n, float(n))
    w[0] = 2.0 * n
    return w


def _sin_weights(n: int) -> np.ndarray:
    w = np.full(n, float(n))
    w[-1] = 2.0 * n
    return w


def _axis_weights(n: int, kind: str) -> np.ndarray:
    return _cos_weights(n) if kind == "cos" else _sin_weights(n)


def analyze(values: np.ndarray, kind_x: str = "cos", kind_y: str = "cos") -> np.ndarray:
    """Nodal array -> amplitudes in the (kind_y, kind_x) basis.

    Works on the last two axes. Sine amplitudes are indexed from mode 1,
    i.e. position m-1 along a sine axis holds mode m.
    """
    ny, nx = values.shape[-2:]
    out = fft.dct(values, type=2, axis=-2) if kind_y == "cos" else fft.dst(values, type=2, axis=-2)
    out = fft.dct(out, type=2, axis=-1) if kind_x == "cos" else fft.dst(out, type=2, axis=-1)
    return out / np.outer(_axis_weights(ny, kind_y), _axis_weights(nx, kind_x))


def synthesize(amplitudes: np.ndarray, kind_x: str = "cos", kind_y: str = "cos") -> np.ndarray:
    """Inverse of analyze"""
    ny, nx = amplitudes.shape[-2:]
    out = amplitudes * np.outer(_axis_weights(ny, kind_y), _axis_weights(nx, kind_x))
    out = fft.idct(out, type=2, axis=-1) if kind_x == "cos" else fft.idst(out, type=2, axis=-1)
    out = fft.idct(out, type=2, axis=-2) if kind_y == "cos" else fft.idst(out, type=2, axis=-2)
    return out


def to_spectral(field: ScalarField) -> SpectralCoeffs:
    """Cosine analysis consistent with the Neumann eigenfunctions"""
    if not np.all(np.isfinite(field.values)):
        raise ValueError("Cannot transform a non-finite field")
    return SpectralCoeffs(field.grid, analyze(field.values))


def from_spectral(coeffs: SpectralCoeffs) -> ScalarField:
    return ScalarField(coeffs.grid, synthesize(coeffs.coeffs))


def parseval_weights(grid: Grid2D) -> np.ndarray:
    """w_k w_l with w_0 = 1, w_k = 1/2 otherwise"""
    wx = np.full(grid.nx, 0.5)
    wx[0] = 1.0
    wy = np.full(grid.ny, 0.5)
    wy[0] = 1.0
    return np.outer(wy, wx)


def _check_p(p: float) -> float:
    p = float(p)
    if math.isnan(p) or p < 1:
        raise ValueError(f"Norm exponent must be >= 1 (or inf), got {p}")
    return p


def lp_values_norm(values: np.ndarray, p: float, cell_area: float) -> float:
    """L^p norm of a nodal array under the cell-average rule"""
    p = _check_p(p)
    a = np.abs(values)
    if p == INF:
        return float(a.max())
    if p == 1.0:
        return float(a.sum() * cell_area)
    if p == 2.0:
        return float(math.sqrt(np.square(a).sum() * cell_area))
    return float((np.power(a, p).sum() * cell_area) ** (1.0 / p))


def lp_norm(field: ScalarField, p: float) -> float:
    """Cell-average L^p norm; p = inf gives max |u|"""
    return lp_values_norm(field.values, p, field.grid.cell_area)


def w1p_norm(field: ScalarField, p: float) -> float:
    """(||u||_p^p + ||d_x u||_p^p + ||d_y u||_p^p)^(1/p), spectral derivatives"""
    from .operators import gradient

    p = _check_p(p)
    grad = gradient(field)
    area = field.grid.cell_area
    parts = [field.values, grad.x, grad.y]
    if p == INF:
        return max(lp_values_norm(a, INF, area) for a in parts)
    total = sum(lp_values_norm(a, p, area) ** p for a in parts)
    return float(total ** (1.0 / p))


# KSF1 snapshot codec

_HEADER = struct.Struct("<4sIII")
_TRAILER = struct.Struct("<4d")
FLAG_DIVERGED = 1


def write_snapshot(path: Union[str, Path], field: ScalarField, t: float) -> Path:
    """Write a field in the KSF1 layout"""
    path = Path(path)
    grid = field.grid
    flags = FLAG_DIVERGED if field.diverged else 0
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(SNAPSHOT_MAGIC, grid.nx, grid.ny, flags))
        fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes(order="C"))
        fh.write(_TRAILER.pack(grid.lx, grid.ly, float(t), 0.0))
    return path


def read_snapshot(path: Union[str, Path]) -> Tuple[ScalarField, float]:
    """Read a KSF1 snapshot; returns (field, t)"""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size + _TRAILER.size:
        raise ValueError(f"Snapshot '{path}' is truncated")
    magic, nx, ny, flags = _HEADER.unpack_from(data, 0)
    if magic != SNAPSHOT_MAGIC:
        raise ValueError(f"Snapshot '{path}' has bad magic {magic!r}")
    n_bytes = 8 * nx * ny
    expected = _HEADER.size + n_bytes + _TRAILER.size
    if len(data) != expected:
        raise ValueError(f"Snapshot '{path}' has {len(data)} bytes, expected {expected}")
    values = np.frombuffer(data, dtype="<f8", count=nx * ny, offset=_HEADER.size)
    lx, ly, t, _reserved = _TRAILER.unpack_from(data, _HEADER.size + n_bytes)
    grid = Grid2D(nx, ny, lx, ly)
    diverged = bool(flags & FLAG_DIVERGED)
    return ScalarField(grid, values.astype(np.float64), diverged=diverged), t

