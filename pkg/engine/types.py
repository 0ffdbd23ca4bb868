"""
Type definitions and constants for the simulation engine.
"""
from typing import Callable, Optional
from enum import Enum

# Scalar nonlinearity signature (source term g, noise profile h)
ScalarFunc = Callable[[float], float]

# p = infinity sentinel for norms
INF = float("inf")

# Hard ceiling on the sup norm before a path counts as diverged
DEFAULT_CEILING = 1e8

# Snapshot file magic
SNAPSHOT_MAGIC = b"KSF1"


class RunStatus(str, Enum):
    """Status of a trajectory"""
    COMPLETED = "completed"
    STOPPED_AT_TAU = "stopped_at_tau"
    DIVERGED = "diverged"
    FAILED = "failed"


class CheckStatus(str, Enum):
    """Status of a named check or suite run"""
    PENDING = "pending"
    RUNNING = "running"
    PASSED = "passed"
    FAILED = "failed"


class NonnegPolicy(str, Enum):
    """What the integrator does with negative nodal values"""
    CLIP = "clip"
    OFF = "off"


class SourceKind(str, Enum):
    """Family of the source term g"""
    LOGISTIC = "logistic"
    BOUNDED_POLYNOMIAL = "bounded_polynomial"
    CUSTOM = "custom"


class NoiseKind(str, Enum):
    """Noise regime"""
    LINEAR = "linear"
    NONLINEAR = "nonlinear"


class ConfigError(ValueError):
    """Malformed configuration; carries the offending line when known"""

    def __init__(self, message: str, line: Optional[int] = None, path: Optional[str] = None):
        self.line = line
        self.path = path
        prefix = ""
        if path is not None:
            prefix = f"{path}:{line}: " if line is not None else f"{path}: "
        elif line is not None:
            prefix = f"line {line}: "
        super().__init__(prefix + message)


class AssumptionViolation(ValueError):
    """A model validator refused the configuration"""

    def __init__(self, report):
        self.report = report
        super().__init__(f"{report.assumption} violated: {report.violation}")
