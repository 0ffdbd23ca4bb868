"""
Tests for the check registry, run log and suite executor.
"""
import pytest

from engine.registry import CheckRegistry, CheckResult
from engine.runlog import RunLog, SuiteExecutor
from engine.types import CheckStatus


def passing(**_):
    """Always passes"""
    return CheckResult(name="passing", passed=True, measured={"x": 1.0})


def failing(**_):
    """Always fails"""
    return CheckResult(name="failing", passed=False, message="x too large")


def raising(**_):
    """Raises"""
    raise RuntimeError("boom")


def echo(profile=None, **_):
    return CheckResult(name="echo", passed=profile == "quick", measured={"profile": profile})


@pytest.fixture
def registry():
    reg = CheckRegistry()
    for name, func in [("passing", passing), ("failing", failing), ("raising", raising), ("echo", echo)]:
        reg.register(name, func)
    return reg


class TestCheckRegistry:
    """Test check registration and lookup"""

    def test_register_and_call(self, registry):
        """Registered checks are callable by name"""
        assert registry.call("passing").passed

    def test_duplicate_fails(self, registry):
        """A name can only be registered once"""
        with pytest.raises(ValueError, match="already registered"):
            registry.register("passing", passing)

    def test_missing_fails(self, registry):
        """Unknown names raise"""
        with pytest.raises(ValueError, match="not found"):
            registry.get("nope")

    def test_list_checks(self, registry):
        """Descriptions come from the docstring"""
        checks = registry.list_checks()
        assert checks["passing"] == "Always passes"
        assert checks["echo"] == "No description"


class TestRunLog:
    """Test the run log"""

    def test_lifecycle(self):
        """pending -> running -> passed"""
        log = RunLog("r1", "suite")
        assert log.status == CheckStatus.PENDING
        log.start()
        assert log.status == CheckStatus.RUNNING
        log.add_entry("a", "step", {"k": 1})
        log.finish(True)
        d = log.to_dict()
        assert d["status"] == "passed"
        assert d["entries"][0]["details"] == {"k": 1}
        assert d["started_at"] is not None and d["completed_at"] is not None

    def test_failure(self):
        """finish(False) keeps the error"""
        log = RunLog("r2", "suite")
        log.finish(False, "bad")
        assert log.status == CheckStatus.FAILED
        assert log.to_dict()["error"] == "bad"


class TestSuiteExecutor:
    """Test sequential suite execution"""

    def test_unknown_check_rejected(self, registry):
        """Executor construction validates names"""
        with pytest.raises(ValueError):
            SuiteExecutor(registry, ["passing", "nope"])

    def test_all_pass(self, registry):
        """A passing suite finishes passed"""
        results, log = SuiteExecutor(registry, ["passing"]).execute()
        assert [r.passed for r in results] == [True]
        assert log.status == CheckStatus.PASSED

    def test_raising_check_isolated(self, registry):
        """A raising check becomes a failed result and the suite continues"""
        results, log = SuiteExecutor(registry, ["raising", "passing", "failing"]).execute()
        assert [r.name for r in results] == ["raising", "passing", "failing"]
        assert [r.passed for r in results] == [False, True, False]
        assert "boom" in results[0].message
        assert log.status == CheckStatus.FAILED
        assert "raising" in log.error and "failing" in log.error
        actions = [e["action"] for e in log.entries]
        assert "check_error" in actions and "check_failed" in actions

    def test_context_passed(self, registry):
        """Context entries become keyword arguments"""
        results, _ = SuiteExecutor(registry, ["echo"]).execute({"profile": "quick"})
        assert results[0].passed

    def test_get_execution(self, registry):
        """Logs are kept by run id"""
        executor = SuiteExecutor(registry, ["passing"])
        _, log = executor.execute(run_id="fixed")
        assert executor.get_execution("fixed") is log
        assert executor.get_execution("other") is None

    @pytest.mark.asyncio
    async def test_execute_async(self, registry):
        """The async variant gives the same results"""
        executor = SuiteExecutor(registry, ["passing", "raising"])
        results, log = await executor.execute_async()
        assert [r.passed for r in results] == [True, False]
        assert log.status == CheckStatus.FAILED


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
