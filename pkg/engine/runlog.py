"""
Execution log and sequential executor for suites of named checks.
"""
from typing import Any, Dict, List, Optional, Sequence, Tuple
from datetime import datetime
import asyncio
import logging
import time
import uuid

from .registry import CheckRegistry, CheckResult
from .types import CheckStatus

logger = logging.getLogger(__name__)


class RunLog:
    """Timestamped log of a suite or simulation run"""

    def __init__(self, run_id: str, suite_id: str):
        self.run_id = run_id
        self.suite_id = suite_id
        self.status = CheckStatus.PENDING
        self.entries: List[Dict[str, Any]] = []
        self.started_at: Optional[datetime] = None
        self.completed_at: Optional[datetime] = None
        self.error: Optional[str] = None

    def add_entry(
        self,
        step_id: str,
        action: str,
        details: Optional[Dict[str, Any]] = None,
        error: Optional[str] = None,
    ):
        """Add an entry to the log"""
        self.entries.append({
            "timestamp": datetime.now().isoformat(),
            "step_id": step_id,
            "action": action,
            "details": details or {},
            "error": error,
        })

    def start(self):
        self.status = CheckStatus.RUNNING
        self.started_at = datetime.now()

    def finish(self, passed: bool, error: Optional[str] = None):
        self.status = CheckStatus.PASSED if passed else CheckStatus.FAILED
        self.completed_at = datetime.now()
        self.error = error

    def to_dict(self) -> Dict[str, Any]:
        """Convert log to dictionary"""
        return {
            "run_id": self.run_id,
            "suite_id": self.suite_id,
            "status": self.status.value,
            "started_at": self.started_at.isoformat() if self.started_at else None,
            "completed_at": self.completed_at.isoformat() if self.completed_at else None,
            "error": self.error,
            "entries": self.entries,
        }


class SuiteExecutor:
    """Runs registered checks in order; a failing or raising check never stops the suite"""

    def __init__(self, registry: CheckRegistry, check_names: Sequence[str], suite_id: str = "verify"):
        for name in check_names:
            registry.get(name)
        self.registry = registry
        self.check_names = list(check_names)
        self.suite_id = suite_id
        self.executions: Dict[str, RunLog] = {}

    def _new_log(self, run_id: Optional[str]) -> RunLog:
        log = RunLog(run_id or str(uuid.uuid4()), self.suite_id)
        self.executions[log.run_id] = log
        log.start()
        return log

    def _record(self, log: RunLog, name: str, result: Optional[CheckResult],
                error: Optional[str], elapsed: float) -> CheckResult:
        if result is None:
            result = CheckResult(name=name, passed=False, message=error)
            log.add_entry(name, "check_error", {"elapsed_s": elapsed}, error=error)
            logger.error("check %s raised: %s", name, error)
        else:
            log.add_entry(
                name,
                "check_passed" if result.passed else "check_failed",
                {"elapsed_s": elapsed, "measured": result.measured,
                 "thresholds": result.thresholds},
                error=None if result.passed else result.message,
            )
            logger.info("check %s: %s (%.1fs)", name,
                        "passed" if result.passed else "FAILED", elapsed)
        return result

    def _finish(self, log: RunLog, results: List[CheckResult]):
        failed = [r.name for r in results if not r.passed]
        log.finish(not failed, f"failed checks: {', '.join(failed)}" if failed else None)

    def execute(self, context: Optional[Dict[str, Any]] = None,
                run_id: Optional[str] = None) -> Tuple[List[CheckResult], RunLog]:
        """
        Execute every check synchronously.
        Returns (results, run_log)
        """
        context = context or {}
        log = self._new_log(run_id)
        results = []
        for name in self.check_names:
            log.add_entry(name, "check_start")
            started = time.perf_counter()
            result, error = None, None
            try:
                result = self.registry.call(name, **context)
            except Exception as e:
                error = f"{type(e).__name__}: {e}"
            results.append(self._record(log, name, result, error, time.perf_counter() - started))
        self._finish(log, results)
        return results, log

    async def execute_async(self, context: Optional[Dict[str, Any]] = None,
                            run_id: Optional[str] = None) -> Tuple[List[CheckResult], RunLog]:
        """
        Execute every check off the event loop, one at a time.
        Returns (results, run_log)
        """
        context = context or {}
        log = self._new_log(run_id)
        results = []
        for name in self.check_names:
            log.add_entry(name, "check_start")
            started = time.perf_counter()
            result, error = None, None
            try:
                result = await asyncio.to_thread(self.registry.call, name, **context)
            except Exception as e:
                error = f"{type(e).__name__}: {e}"
            results.append(self._record(log, name, result, error, time.perf_counter() - started))
        self._finish(log, results)
        return results, log

    def get_execution(self, run_id: str) -> Optional[RunLog]:
        """Get run log by run ID"""
        return self.executions.get(run_id)
