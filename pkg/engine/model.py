"""
Model configuration: chemotactic sensitivity, source term, noise family and
the validators that certify the structural assumptions before a run.
"""
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Tuple, Union
import logging
import math

import numpy as np
from pydantic import BaseModel, Field

from .fields import ScalarField
from .types import AssumptionViolation, NoiseKind, ScalarFunc, SourceKind

logger = logging.getLogger(__name__)

DEFAULT_Z_WINDOW = 1e3
DEFAULT_S_MAX = 1e6
# Relative slack for float comparisons in certificates
CERT_RTOL = 1e-12


class AssumptionReport(BaseModel):
    """Certificate (ok=True) or violation (ok=False) for one assumption"""
    assumption: str
    ok: bool
    status: str = "analytic"  # "analytic" or "sampled"
    values: Dict[str, float] = Field(default_factory=dict)
    violation: Optional[str] = None
    witness: Optional[float] = None


def _certificate(assumption: str, values: Dict[str, float], status: str = "analytic") -> AssumptionReport:
    return AssumptionReport(assumption=assumption, ok=True, status=status, values=values)


def _violation(assumption: str, message: str, witness: Optional[float] = None,
               status: str = "analytic") -> AssumptionReport:
    return AssumptionReport(
        assumption=assumption, ok=False, status=status, violation=message, witness=witness
    )


def _identity(z):
    return z


def _saturating(z):
    return z / (1.0 + np.abs(z))


# Named noise profiles usable from configuration files
PROFILES: Dict[str, ScalarFunc] = {
    "identity": _identity,
    "saturating": _saturating,
    "sine": np.sin,
    "tanh": np.tanh,
}


@dataclass(frozen=True)
class SourceSpec:
    """Source term g.

    Callables for the custom kind must accept numpy arrays.
    """
    kind: SourceKind
    mu: Optional[float] = None
    coeffs: Tuple[float, ...] = ()
    func: Optional[ScalarFunc] = None
    derivative: Optional[ScalarFunc] = None
    # (H-2) constants: g(s) <= c1 - mu_tilde s^2
    c1: Optional[float] = None
    mu_tilde: Optional[float] = None
    # (A-2) constants: |g(s)| <= c2 + mu_prime |s|^n
    c2: Optional[float] = None
    mu_prime: Optional[float] = None
    n: Optional[float] = None

    def __post_init__(self):
        if self.kind == SourceKind.LOGISTIC and not (self.mu is not None and self.mu > 0):
            raise ValueError(f"Logistic source needs mu > 0, got {self.mu}")
        if self.kind == SourceKind.CUSTOM and self.func is None:
            raise ValueError("Custom source needs a function")

    @classmethod
    def logistic(cls, mu: float, **kwargs) -> "SourceSpec":
        return cls(SourceKind.LOGISTIC, mu=mu, **kwargs)

    @classmethod
    def polynomial(cls, coeffs, **kwargs) -> "SourceSpec":
        """g(s) = sum_k coeffs[k] s^k"""
        return cls(SourceKind.BOUNDED_POLYNOMIAL, coeffs=tuple(float(c) for c in coeffs), **kwargs)

    @classmethod
    def zero(cls, **kwargs) -> "SourceSpec":
        return cls.polynomial((), **kwargs)

    @classmethod
    def custom(cls, func: ScalarFunc, derivative: Optional[ScalarFunc] = None, **kwargs) -> "SourceSpec":
        return cls(SourceKind.CUSTOM, func=func, derivative=derivative, **kwargs)

    @property
    def is_zero(self) -> bool:
        return self.kind == SourceKind.BOUNDED_POLYNOMIAL and not any(self.coeffs)

    def g(self, s):
        s = np.asarray(s, dtype=np.float64)
        if self.kind == SourceKind.LOGISTIC:
            return self.mu * s * (1.0 - s)
        if self.kind == SourceKind.BOUNDED_POLYNOMIAL:
            if not self.coeffs:
                return np.zeros_like(s)
            return np.polynomial.polynomial.polyval(s, self.coeffs)
        return np.asarray(self.func(s), dtype=np.float64)

    def dg(self, s):
        s = np.asarray(s, dtype=np.float64)
        if self.kind == SourceKind.LOGISTIC:
            return self.mu * (1.0 - 2.0 * s)
        if self.kind == SourceKind.BOUNDED_POLYNOMIAL:
            if len(self.coeffs) < 2:
                return np.zeros_like(s)
            return np.polynomial.polynomial.polyval(
                s, np.polynomial.polynomial.polyder(self.coeffs)
            )
        if self.derivative is None:
            raise ValueError("Custom source has no derivative")
        return np.asarray(self.derivative(s), dtype=np.float64)


@dataclass(frozen=True)
class LinearNoiseSpec:
    """sigma_i(z) = kappa_i h(z); K is set once validate_H1 certifies the profile"""
    kappas: Tuple[float, ...]
    profile: ScalarFunc = PROFILES["identity"]
    profile_name: str = "identity"
    K: Optional[float] = None
    lipschitz: Optional[float] = None

    @classmethod
    def named(cls, kappas, profile_name: str = "identity") -> "LinearNoiseSpec":
        if profile_name not in PROFILES:
            raise ValueError(
                f"Unknown noise profile '{profile_name}', expected one of {sorted(PROFILES)}"
            )
        return cls(tuple(float(k) for k in kappas), PROFILES[profile_name], profile_name)

    @property
    def k_modes(self) -> int:
        return len(self.kappas)

    @property
    def kappa_l2(self) -> float:
        return float(math.sqrt(sum(k * k for k in self.kappas)))

    @property
    def certified(self) -> bool:
        return self.K is not None

    def sigma(self, z) -> np.ndarray:
        """Stacked sigma_i(z), shape (k_modes,) + z.shape"""
        hz = np.asarray(self.profile(np.asarray(z, dtype=np.float64)), dtype=np.float64)
        return np.asarray(self.kappas, dtype=np.float64).reshape((-1,) + (1,) * hz.ndim) * hz


@dataclass(frozen=True)
class NonlinearNoiseSpec:
    """Diffusion b_i ||u||_q^r u"""
    bs: Tuple[float, ...]
    q: float
    r: float
    certified: bool = False

    def __post_init__(self):
        if self.q < 2:
            raise ValueError(f"q must be >= 2, got {self.q}")
        if self.r <= 0:
            raise ValueError(f"r must be positive, got {self.r}")

    @property
    def k_modes(self) -> int:
        return len(self.bs)

    @property
    def sum_b2(self) -> float:
        return float(sum(b * b for b in self.bs))


NoiseSpec = Union[LinearNoiseSpec, NonlinearNoiseSpec]


def noise_kind(noise: NoiseSpec) -> NoiseKind:
    return NoiseKind.NONLINEAR if isinstance(noise, NonlinearNoiseSpec) else NoiseKind.LINEAR


# Validators


def _symmetric_geometric(z_max: float, z_min: float, n: int) -> np.ndarray:
    g = np.geomspace(z_min, z_max, n)
    return np.concatenate([-g[::-1], [0.0], g])


def _max_slope(h: ScalarFunc, z: np.ndarray) -> float:
    hz = np.asarray(h(z), dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        slopes = np.abs(np.diff(hz)) / np.diff(z)
    return float(np.max(slopes)) if np.all(np.isfinite(slopes)) else math.inf


def validate_H1(spec: LinearNoiseSpec, z_window: float = DEFAULT_Z_WINDOW,
                n_samples: int = 20001) -> AssumptionReport:
    """Certify sigma(0) = 0 and the l2-Lipschitz bound; returns K"""
    h0 = float(np.asarray(spec.profile(np.asarray(0.0))))
    if h0 != 0.0:
        return _violation("H-1", f"sigma(0) != 0: h(0) = {h0}", witness=0.0)
    if not all(math.isfinite(k) for k in spec.kappas):
        return _violation("H-1", "kappa sequence is not finite")

    coarse = _max_slope(spec.profile, _symmetric_geometric(z_window, 1e-6, n_samples // 2))
    fine = _max_slope(spec.profile, _symmetric_geometric(z_window, 1e-9, n_samples))
    if not math.isfinite(fine) or fine > 1.5 * coarse + 1e-12:
        return _violation(
            "H-1",
            f"Lipschitz ratio of h unbounded on [-{z_window:g}, {z_window:g}] "
            f"(sampled {coarse:.4g} -> {fine:.4g} under refinement)",
            status="sampled",
        )
    lipschitz = max(coarse, fine)
    status = "analytic" if spec.profile_name == "identity" else "sampled"
    return _certificate(
        "H-1",
        {"L_h": lipschitz, "kappa_l2": spec.kappa_l2, "K": lipschitz * spec.kappa_l2},
        status=status,
    )


def _sample_grid(s_max: float, n: int) -> np.ndarray:
    return np.concatenate([[0.0], np.geomspace(1e-6, s_max, n)])


def validate_H2(source: SourceSpec, mu_tilde: Optional[float] = None,
                c1: Optional[float] = None, s_max: float = DEFAULT_S_MAX,
                n_samples: int = 4001) -> AssumptionReport:
    """Certify g(0) >= 0 and g(s) <= c1 - mu_tilde s^2 on [0, s_max].

    The logistic prototype is certified analytically: with eps = mu - mu_tilde
    the smallest admissible constant is c1 = mu^2 / (4 eps).
    """
    mu_tilde = mu_tilde if mu_tilde is not None else source.mu_tilde
    c1 = c1 if c1 is not None else source.c1
    g0 = float(source.g(0.0))
    if g0 < 0:
        return _violation("H-2", f"g(0) = {g0} < 0", witness=0.0)

    if source.kind == SourceKind.LOGISTIC:
        mu = source.mu
        if mu_tilde is None:
            mu_tilde = 0.75 * mu
        if mu_tilde <= 0:
            return _violation("H-2", f"mu_tilde must be positive, got {mu_tilde}")
        eps = mu - mu_tilde
        if eps <= 0:
            witness = (c1 or 0.0) / mu + 1.0
            return _violation(
                "H-2", f"mu_tilde = {mu_tilde} >= mu = {mu}: mu s dominates for large s",
                witness=witness,
            )
        needed = mu * mu / (4.0 * eps)
        if c1 is None:
            c1 = needed
        elif c1 < needed * (1.0 - CERT_RTOL):
            return _violation(
                "H-2", f"c1 = {c1} below the required {needed}", witness=mu / (2.0 * eps)
            )
        return _certificate("H-2", {"c1": float(c1), "mu_tilde": float(mu_tilde)})

    if mu_tilde is None:
        raise ValueError("mu_tilde is required to certify a non-logistic source")
    if mu_tilde <= 0:
        return _violation("H-2", f"mu_tilde must be positive, got {mu_tilde}", status="sampled")
    s = _sample_grid(s_max, n_samples)
    excess = source.g(s) + mu_tilde * s * s
    if c1 is None:
        idx = int(np.argmax(excess))
        if idx == len(s) - 1:
            return _violation(
                "H-2",
                f"g(s) + mu_tilde s^2 still growing at S_max = {s_max:g}; no quadratic domination",
                witness=float(s[idx]),
                status="sampled",
            )
        c1 = float(excess[idx])
        return _certificate("H-2", {"c1": c1, "mu_tilde": float(mu_tilde)}, status="sampled")
    bad = np.nonzero(excess > c1 * (1.0 + CERT_RTOL) + CERT_RTOL)[0]
    if bad.size:
        witness = float(s[bad[0]])
        return _violation(
            "H-2", f"g(s) > c1 - mu_tilde s^2 at s = {witness:.6g}", witness=witness,
            status="sampled",
        )
    return _certificate("H-2", {"c1": float(c1), "mu_tilde": float(mu_tilde)}, status="sampled")


def growth_constants(source: SourceSpec) -> Optional[Tuple[float, float, float]]:
    """(c2, mu_prime, n) for |g(s)| <= c2 + mu_prime |s|^n, declared or derived"""
    if source.c2 is not None and source.mu_prime is not None and source.n is not None:
        return float(source.c2), float(source.mu_prime), float(source.n)
    if source.kind == SourceKind.LOGISTIC:
        derived = (source.mu / 4.0, source.mu, 2.0)
    elif source.kind == SourceKind.BOUNDED_POLYNOMIAL:
        coeffs = [abs(c) for c in source.coeffs]
        degree = max((k for k, c in enumerate(coeffs) if c), default=0)
        mu_prime = sum(coeffs[1:]) or 1.0
        derived = (sum(coeffs), mu_prime, float(max(degree, 1)))
    else:
        return None
    return (
        float(source.c2) if source.c2 is not None else derived[0],
        float(source.mu_prime) if source.mu_prime is not None else derived[1],
        float(source.n) if source.n is not None else derived[2],
    )


def validate_A1_A2(noise: NonlinearNoiseSpec, source: SourceSpec,
                   s_max: float = DEFAULT_S_MAX, n_samples: int = 4001) -> AssumptionReport:
    """Certify the exponent window on (q, r) and the polynomial bound on g"""
    constants = growth_constants(source)
    if constants is None:
        return _violation("A-2", "(A-2) constants c2, mu_prime, n not declared for custom source")
    c2, mu_prime, n = constants
    if n <= 0 or mu_prime <= 0 or c2 < 0:
        return _violation("A-2", f"(A-2) constants must be positive: c2={c2}, mu'={mu_prime}, n={n}")
    m = max(2.0, n)
    q, r = noise.q, noise.r

    if not math.isfinite(noise.sum_b2):
        return _violation("A-1", "sum of b_i^2 is not finite")
    if not r > (m - 1.0) / 2.0:
        return _violation("A-1", f"r > (2 v n - 1)/2 fails: r = {r}, bound = {(m - 1.0) / 2.0}")
    if not q >= 2.0 * r:
        return _violation("A-1", f"q >= 2r fails: q = {q}, 2r = {2.0 * r}")
    bound = 2.0 * (m - 1.0) * r / (2.0 * r - m + 1.0)
    if not q > bound:
        return _violation("A-1", f"q > 2(2 v n - 1)r/(2r - 2 v n + 1) fails: q = {q}, bound = {bound}")

    g0 = float(source.g(0.0))
    if g0 < 0:
        return _violation("A-2", f"g(0) = {g0} < 0", witness=0.0)
    s = _sample_grid(s_max, n_samples)
    excess = np.abs(source.g(s)) - (c2 + mu_prime * np.power(s, n))
    tol = CERT_RTOL * (c2 + mu_prime * np.power(s, n)) + CERT_RTOL
    bad = np.nonzero(excess > tol)[0]
    status = "sampled" if source.kind == SourceKind.CUSTOM else "analytic"
    if bad.size:
        witness = float(s[bad[0]])
        return _violation("A-2", f"|g(s)| > c2 + mu' s^n at s = {witness:.6g}",
                          witness=witness, status=status)
    return _certificate(
        "A-1/A-2",
        {"q": q, "r": r, "n": n, "c2": c2, "mu_prime": mu_prime,
         "sum_b2": noise.sum_b2, "q_bound": bound},
        status=status,
    )


def p0_window(chi: float, mu: float) -> Optional[Tuple[float, float]]:
    """(2, chi/(chi - mu)^+) with chi/0+ = inf; None when the window is empty"""
    if chi <= 0 or mu <= 0:
        raise ValueError(f"chi and mu must be positive, got chi={chi}, mu={mu}")
    gap = max(chi - mu, 0.0)
    upper = math.inf if gap == 0.0 else chi / gap
    if upper <= 2.0:
        return None
    return (2.0, upper)


def in_window(p0: float, window: Optional[Tuple[float, float]]) -> bool:
    return window is not None and window[0] < p0 < window[1]


def delta(p0: float, chi: float, mu: float) -> float:
    """p0 mu - (p0 - 1) chi, positive inside the p0 window"""
    return p0 * mu - (p0 - 1.0) * chi


def young_allowance(c1: float, p0: float, delta_value: float, area: float) -> float:
    """C in c1 p0 int u^(p0-1) <= (delta/2) int u^(p0+1) + C, for u >= 0"""
    if c1 <= 0:
        return 0.0
    if delta_value <= 0:
        raise ValueError(f"delta must be positive, got {delta_value}")
    # pointwise max of c1 p0 s^(p0-1) - (delta/2) s^(p0+1)
    s_star = math.sqrt(2.0 * c1 * p0 * (p0 - 1.0) / (delta_value * (p0 + 1.0)))
    pointwise = c1 * p0 * s_star ** (p0 - 1.0) - 0.5 * delta_value * s_star ** (p0 + 1.0)
    return max(pointwise, 0.0) * area


def gamma_window(n: float, r: float) -> float:
    """Upper end of 0 < gamma < 1/(2 (2 v n v (r+1)))"""
    return 1.0 / (2.0 * max(2.0, n, r + 1.0))


@dataclass(frozen=True)
class ModelParams:
    chi: float
    source: SourceSpec
    noise: NoiseSpec
    u0: ScalarField
    m0: float
    reports: Tuple[AssumptionReport, ...] = ()

    @property
    def grid(self):
        return self.u0.grid

    @property
    def noise_kind(self) -> NoiseKind:
        return noise_kind(self.noise)

    def report(self, assumption: str) -> Optional[AssumptionReport]:
        for r in self.reports:
            if r.assumption == assumption:
                return r
        return None

    @property
    def h2_constants(self) -> Optional[Tuple[float, float]]:
        """Certified (c1, mu_tilde), if any"""
        rep = self.report("H-2")
        if rep is None or not rep.ok:
            return None
        return rep.values["c1"], rep.values["mu_tilde"]


def build_model(
    chi: float,
    source: SourceSpec,
    noise: NoiseSpec,
    u0: ScalarField,
    enforce: bool = True,
    mu_tilde: Optional[float] = None,
) -> ModelParams:
    """Validate and assemble model parameters.

    With ``enforce`` the first violated assumption raises AssumptionViolation;
    otherwise reports are recorded and the run proceeds (blow-up studies).
    """
    if chi < 0 or not math.isfinite(chi):
        raise ValueError(f"chi must be >= 0, got {chi}")
    if not np.all(np.isfinite(u0.values)) or u0.min() < 0:
        raise ValueError("u0 must be finite and nonnegative")

    reports: List[AssumptionReport] = []
    if isinstance(noise, LinearNoiseSpec):
        h1 = validate_H1(noise)
        reports.append(h1)
        if h1.ok:
            noise = replace(noise, K=h1.values["K"], lipschitz=h1.values["L_h"])
        h2 = validate_H2(source, mu_tilde=mu_tilde) if (
            source.kind == SourceKind.LOGISTIC or mu_tilde is not None or source.mu_tilde is not None
        ) else _violation("H-2", "mu_tilde not declared for a non-logistic source")
        reports.append(h2)
        if h2.ok and chi > 0:
            window = p0_window(chi, h2.values["mu_tilde"])
            if window is None:
                reports.append(_violation(
                    "window", f"mu_tilde = {h2.values['mu_tilde']} <= chi/2 = {chi / 2}: p0 window empty"
                ))
            else:
                reports.append(_certificate("window", {"p0_low": window[0], "p0_high": window[1]}))
    else:
        a12 = validate_A1_A2(noise, source)
        reports.append(a12)
        if a12.ok:
            noise = replace(noise, certified=True)

    for rep in reports:
        if not rep.ok:
            logger.warning("%s: %s", rep.assumption, rep.violation)
            if enforce:
                raise AssumptionViolation(rep)

    return ModelParams(
        chi=float(chi), source=source, noise=noise, u0=u0, m0=u0.integral(),
        reports=tuple(reports),
    )
