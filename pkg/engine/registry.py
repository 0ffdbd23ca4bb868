"""
Registry of named checks used by the acceptance suite.
"""
from typing import Any, Callable, Dict, Optional

from pydantic import BaseModel, Field


class CheckResult(BaseModel):
    """Outcome of one named check, with the numbers it was judged on"""
    name: str
    passed: bool
    measured: Dict[str, Any] = Field(default_factory=dict)
    thresholds: Dict[str, Any] = Field(default_factory=dict)
    message: Optional[str] = None


CheckFunc = Callable[..., CheckResult]


class CheckRegistry:
    """Registry for acceptance checks"""

    def __init__(self):
        self.checks: Dict[str, CheckFunc] = {}

    def register(self, name: str, func: CheckFunc):
        """Register a check"""
        if name in self.checks:
            raise ValueError(f"Check '{name}' already registered")
        self.checks[name] = func

    def get(self, name: str) -> CheckFunc:
        """Get a check by name"""
        if name not in self.checks:
            raise ValueError(f"Check '{name}' not found")
        return self.checks[name]

    def call(self, name: str, **kwargs) -> CheckResult:
        """Call a check with kwargs"""
        return self.get(name)(**kwargs)

    def list_checks(self) -> Dict[str, str]:
        """Check names with the first line of their docstring"""
        return {
            name: (func.__doc__ or "No description").strip().splitlines()[0]
            for name, func in self.checks.items()
        }


_registry: Optional[CheckRegistry] = None


def get_registry() -> CheckRegistry:
    """Get or create the global check registry"""
    global _registry
    if _registry is None:
        _registry = CheckRegistry()
    return _registry
