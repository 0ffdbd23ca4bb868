"""
Run configuration: TOML file -> validated RunConfig -> engine objects.

Every section is a pydantic model with ``extra="forbid"``, so a misspelled key
is an error. Parse and schema errors are raised as ConfigError carrying the
line of the offending key when it can be located.
"""
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union
import math
import re

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, ValidationError

from engine.fields import Grid2D, ScalarField, build_grid
from engine.integrator import CutoffSpec, IntegratorOptions
from engine.model import (
    LinearNoiseSpec,
    ModelParams,
    NoiseSpec,
    NonlinearNoiseSpec,
    SourceSpec,
    build_model,
)
from engine.types import DEFAULT_CEILING, ConfigError, NonnegPolicy


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GridSection(_Section):
    nx: int = Field(64, ge=4)
    ny: int = Field(64, ge=4)
    lx: float = Field(math.pi, gt=0)
    ly: float = Field(math.pi, gt=0)


class InitialCondition(_Section):
    """constant: mean; cosine: mean + amplitude cos(k pi x/lx) cos(l pi y/ly);
    gaussian: mean + peak exp(-|x - (x0, y0)|^2 / (2 sigma^2))"""
    kind: Literal["constant", "cosine", "gaussian"] = "cosine"
    mean: float = 1.0
    amplitude: float = 0.5
    k: int = Field(1, ge=0)
    l: int = Field(0, ge=0)
    peak: float = 1.0
    sigma: float = Field(0.1, gt=0)
    x0: float = 0.0
    y0: float = 0.0


class ModelSection(_Section):
    chi: float = Field(1.0, ge=0)
    u0: InitialCondition = Field(default_factory=InitialCondition)


class SourceSection(_Section):
    kind: Literal["logistic", "bounded_polynomial", "zero"] = "logistic"
    mu: Optional[float] = 1.0
    mu_tilde: Optional[float] = None
    c1: Optional[float] = None
    coeffs: List[float] = Field(default_factory=list)
    c2: Optional[float] = None
    mu_prime: Optional[float] = None
    n: Optional[float] = None


class NoiseSection(_Section):
    kind: Literal["linear", "nonlinear", "none"] = "linear"
    profile: str = "identity"
    kappas: List[float] = Field(default_factory=lambda: [0.08, 0.06])
    bs: List[float] = Field(default_factory=list)
    q: float = 4.0
    r: float = 1.0


class IntegratorSection(_Section):
    T: float = Field(1.0, gt=0)
    dt: float = Field(1e-3, gt=0)
    nonneg: NonnegPolicy = NonnegPolicy.CLIP
    ceiling: float = Field(DEFAULT_CEILING, gt=0)
    lp: List[float] = Field(default_factory=lambda: [2.0])
    m_thresholds: List[float] = Field(default_factory=list)
    stop_at: Optional[float] = None
    cutoff_m: Optional[float] = Field(None, gt=0)
    snapshot_times: List[float] = Field(default_factory=list)
    substeps: int = Field(1, ge=1)
    store_fields: bool = False


class EnsembleSection(_Section):
    paths: int = Field(8, ge=1)
    seed: int = Field(0, ge=0)
    workers: int = Field(1, ge=1)
    p0: Optional[float] = None
    gamma: Optional[float] = None
    tail_q: Optional[float] = None
    n_boot: int = Field(2000, ge=10)


class OutputSection(_Section):
    dir: str = "runs/out"
    snapshots: bool = True


class PicardSection(_Section):
    T: float = Field(0.05, gt=0)
    dt: Optional[float] = Field(None, gt=0)
    # None: 2 ||u0||_inf
    m: Optional[float] = Field(None, gt=0)
    tol: float = Field(1e-9, gt=0)
    max_iter: int = Field(20, ge=1)
    sweep_T: List[float] = Field(default_factory=list)
    sweep_m: List[float] = Field(default_factory=list)


class ItoSection(_Section):
    p: float = Field(2.0, ge=2)
    dts: List[float] = Field(default_factory=lambda: [4e-3, 2e-3, 1e-3])
    paths: int = Field(4, ge=1)


class CertifySection(_Section):
    trials: int = Field(100, ge=1)
    t_min: float = Field(1e-3, gt=0)
    t_max: float = Field(1.0, gt=0)
    n_t: int = Field(7, ge=1)
    p_list: List[float] = Field(default_factory=lambda: [2.0, 4.0, math.inf])
    beta_list: List[float] = Field(default_factory=lambda: [0.0, 0.25, 0.45])
    eps: float = Field(0.05, gt=0)
    seed: int = 0
    refine: bool = True


class RunConfig(_Section):
    grid: GridSection = Field(default_factory=GridSection)
    model: ModelSection = Field(default_factory=ModelSection)
    source: SourceSection = Field(default_factory=SourceSection)
    noise: NoiseSection = Field(default_factory=NoiseSection)
    integrator: IntegratorSection = Field(default_factory=IntegratorSection)
    ensemble: EnsembleSection = Field(default_factory=EnsembleSection)
    output: OutputSection = Field(default_factory=OutputSection)
    picard: PicardSection = Field(default_factory=PicardSection)
    ito: ItoSection = Field(default_factory=ItoSection)
    certify: CertifySection = Field(default_factory=CertifySection)

    _source_text: Optional[str] = PrivateAttr(default=None)
    _source_path: Optional[str] = PrivateAttr(default=None)

    @property
    def source_text(self) -> Optional[str]:
        return self._source_text

    @property
    def source_path(self) -> Optional[str]:
        return self._source_path

    def echo(self) -> Dict[str, Any]:
        """Config echo for the manifest: verbatim file text plus resolved values"""
        return {
            "path": self._source_path,
            "text": self._source_text,
            "resolved": self.model_dump(mode="json"),
        }


# Parsing


_TOML_LINE = re.compile(r"at line (\d+)")


def _locate(text: str, loc: Tuple[Any, ...]) -> Optional[int]:
    """Line of the key named by a pydantic error location, if present"""
    keys = [str(k) for k in loc if isinstance(k, str)]
    if not keys:
        return None
    header, key = ".".join(keys[:-1]), keys[-1]
    section = ""
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line.startswith("["):
            section = line.strip("[] ")
            if section == ".".join(keys):
                return i
            continue
        if section == header and re.match(rf"{re.escape(key)}\s*=", line):
            return i
    if len(keys) > 1:
        return _locate(text, tuple(keys[:-1]))
    return None


def parse_config(text: str, path: Optional[str] = None) -> RunConfig:
    """Parse TOML text into a RunConfig"""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        match = _TOML_LINE.search(str(e))
        raise ConfigError(str(e), line=int(match.group(1)) if match else None, path=path)
    try:
        config = RunConfig.model_validate(raw)
    except ValidationError as e:
        err = e.errors()[0]
        where = ".".join(str(k) for k in err["loc"])
        raise ConfigError(f"{where}: {err['msg']}", line=_locate(text, err["loc"]), path=path)
    config._source_text = text
    config._source_path = path
    return config


def load_config(path: Union[str, Path]) -> RunConfig:
    """Load a TOML config file"""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config: {e.strerror}", path=str(path))
    return parse_config(text, str(path))


def apply_overrides(config: RunConfig, seed: Optional[int] = None, out: Optional[str] = None,
                    dt: Optional[float] = None, paths: Optional[int] = None) -> RunConfig:
    """Copy of config with command-line overrides applied"""
    updates = {}
    if seed is not None:
        if seed < 0:
            raise ConfigError(f"--seed must be >= 0, got {seed}")
        updates["ensemble"] = config.ensemble.model_copy(update={"seed": seed})
    if paths is not None:
        if paths < 1:
            raise ConfigError(f"--paths must be >= 1, got {paths}")
        base = updates.get("ensemble", config.ensemble)
        updates["ensemble"] = base.model_copy(update={"paths": paths})
    if dt is not None:
        if not dt > 0:
            raise ConfigError(f"--dt must be positive, got {dt}")
        updates["integrator"] = config.integrator.model_copy(update={"dt": dt})
    if out is not None:
        updates["output"] = config.output.model_copy(update={"dir": out})
    new = config.model_copy(update=updates)
    new._source_text = config._source_text
    new._source_path = config._source_path
    return new


# Engine objects


def grid_from(config: RunConfig) -> Grid2D:
    g = config.grid
    try:
        return build_grid(g.nx, g.ny, g.lx, g.ly)
    except ValueError as e:
        raise ConfigError(f"grid: {e}")


def initial_field(ic: InitialCondition, grid: Grid2D) -> ScalarField:
    if ic.kind == "constant":
        return ScalarField.constant(grid, ic.mean)
    if ic.kind == "cosine":
        return ScalarField.cosine_mode(grid, ic.k, ic.l, ic.amplitude) + ScalarField.constant(grid, ic.mean)
    return ScalarField.from_function(
        grid,
        lambda X, Y: ic.mean + ic.peak * np.exp(
            -((X - ic.x0) ** 2 + (Y - ic.y0) ** 2) / (2.0 * ic.sigma ** 2)
        ),
    )


def source_from(section: SourceSection) -> SourceSpec:
    extra = dict(c1=section.c1, mu_tilde=section.mu_tilde, c2=section.c2,
                 mu_prime=section.mu_prime, n=section.n)
    try:
        if section.kind == "logistic":
            return SourceSpec.logistic(section.mu, **extra)
        if section.kind == "zero":
            return SourceSpec.zero(**extra)
        return SourceSpec.polynomial(section.coeffs, **extra)
    except ValueError as e:
        raise ConfigError(f"source: {e}")


def noise_from(section: NoiseSection) -> NoiseSpec:
    try:
        if section.kind == "none":
            return LinearNoiseSpec.named((), "identity")
        if section.kind == "linear":
            return LinearNoiseSpec.named(section.kappas, section.profile)
        return NonlinearNoiseSpec(tuple(float(b) for b in section.bs), section.q, section.r)
    except ValueError as e:
        raise ConfigError(f"noise: {e}")


def build_params(config: RunConfig) -> ModelParams:
    """Validated model parameters; raises AssumptionViolation on a failed gate"""
    grid = grid_from(config)
    source = source_from(config.source)
    try:
        u0 = initial_field(config.model.u0, grid)
    except ValueError as e:
        raise ConfigError(f"model.u0: {e}")
    return build_model(config.model.chi, source, noise_from(config.noise), u0, enforce=True,
                       mu_tilde=config.source.mu_tilde)


def integrator_options(config: RunConfig, store_fields: Optional[bool] = None) -> IntegratorOptions:
    s = config.integrator
    return IntegratorOptions(
        nonneg=s.nonneg,
        ceiling=s.ceiling,
        lp_list=tuple(s.lp),
        cutoff=CutoffSpec(s.cutoff_m) if s.cutoff_m is not None else None,
        stop_at=s.stop_at,
        tau_thresholds=tuple(s.m_thresholds),
        snapshot_times=tuple(s.snapshot_times),
        store_fields=s.store_fields if store_fields is None else store_fields,
        substeps=s.substeps,
    )
