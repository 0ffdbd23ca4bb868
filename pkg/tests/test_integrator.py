"""
Tests for the exponential Euler-Maruyama stepper, the cutoff and trajectories.
"""
import math

import numpy as np
import pytest

from engine.fields import ScalarField, build_grid
from engine.integrator import (
    CutoffSpec,
    IntegratorOptions,
    TrajectoryRecord,
    detect_stopping,
    run_trajectory,
    step_count,
    step_mild,
    step_mild_cutoff,
    theta,
    theta_m,
)
from engine.model import LinearNoiseSpec, NonlinearNoiseSpec, SourceSpec, build_model
from engine.noise import SeedContext, WienerIncrement, sample_increment
from engine.operators import heat_semigroup
from engine.types import NonnegPolicy, RunStatus
from workflows.acceptance import blowup_params, desk_params


def heat_only(grid, u0):
    """chi = 0, no source, no noise: pure heat flow"""
    return build_model(0.0, SourceSpec.zero(), LinearNoiseSpec.named(()), u0, enforce=False)


class TestCutoff:
    """Test the quintic cutoff profile"""

    def test_plateaus(self):
        """1 on [0, 1], 0 beyond 2"""
        assert theta(0.0) == 1.0
        assert theta(1.0) == 1.0
        assert theta(2.0) == 0.0
        assert theta(7.5) == 0.0

    def test_midpoint_and_monotone(self):
        """theta(1.5) = 1/2 and theta decreases"""
        assert theta(1.5) == pytest.approx(0.5)
        values = theta(np.linspace(0.0, 3.0, 301))
        assert np.all(np.diff(values) <= 1e-15)

    def test_c2_at_joins(self):
        """First and second differences vanish at r = 1 and r = 2"""
        h = 1e-4
        for r in (1.0, 2.0):
            d1 = (theta(r + h) - theta(r - h)) / (2 * h)
            d2 = (theta(r + h) - 2 * theta(r) + theta(r - h)) / h ** 2
            assert abs(d1) < 1e-6
            assert abs(d2) < 1e-2

    def test_scaled(self):
        """theta_m(x) = theta(x/m)"""
        assert theta_m(3.0, CutoffSpec(2.0)) == pytest.approx(0.5)
        with pytest.raises(ValueError):
            theta_m(-1.0, CutoffSpec(2.0))
        with pytest.raises(ValueError):
            CutoffSpec(0.0)


class TestStepMild:
    """Test single steps"""

    def test_heat_only_step(self, pi_grid):
        """Without drift and noise a step is e^{-dt A}"""
        u0 = ScalarField.cosine_mode(pi_grid, 2, 1, 0.5) + ScalarField.constant(pi_grid, 1.0)
        params = heat_only(pi_grid, u0)
        out = step_mild(u0, params, 0.01)
        assert np.abs(out.values - heat_semigroup(u0, 0.01).values).max() <= 1e-12

    def test_constant_steady_state(self, pi_grid):
        """u = 1 is a steady state of the logistic system without noise"""
        u0 = ScalarField.constant(pi_grid, 1.0)
        params = build_model(1.0, SourceSpec.logistic(1.0), LinearNoiseSpec.named(()), u0)
        out = step_mild(u0, params, 0.01)
        assert np.allclose(out.values, 1.0, atol=1e-13)

    def test_noise_enters_linearly(self, desk):
        """Doubling the increment doubles its contribution"""
        zero = step_mild(desk.u0, desk, 1e-3)
        dW = np.array([0.01, -0.02])
        one = step_mild(desk.u0, desk, 1e-3, WienerIncrement(1e-3, dW))
        two = step_mild(desk.u0, desk, 1e-3, WienerIncrement(1e-3, 2 * dW))
        assert np.allclose(two.values - zero.values, 2 * (one.values - zero.values), atol=1e-12)

    def test_increment_mode_mismatch(self, desk):
        """Increment width must match the noise"""
        with pytest.raises(ValueError):
            step_mild(desk.u0, desk, 1e-3, WienerIncrement(1e-3, np.zeros(3)))

    def test_rejects_bad_input(self, desk):
        """Non-positive dt and diverged fields are refused"""
        with pytest.raises(ValueError):
            step_mild(desk.u0, desk, 0.0)
        bad = ScalarField(desk.grid, np.full(desk.grid.shape, np.inf), diverged=True)
        with pytest.raises(ValueError):
            step_mild(bad, desk, 1e-3)

    def test_ceiling_flags_divergence(self, desk):
        """A result above the ceiling comes back flagged"""
        out = step_mild(desk.u0, desk, 1e-3, options=IntegratorOptions(ceiling=1.0))
        assert out.diverged

    def test_cutoff_off_drift(self, desk):
        """Beyond 2m the linear-noise drift is switched off, noise kept"""
        inc = WienerIncrement(1e-3, np.array([0.01, 0.02]))
        cut = step_mild_cutoff(desk.u0, desk, 1e-3, inc, CutoffSpec(1.0), running_sup=5.0)
        noise_only = build_model(0.0, SourceSpec.zero(), desk.noise, desk.u0, enforce=False)
        expected = step_mild(desk.u0, noise_only, 1e-3, inc)
        assert np.allclose(cut.values, expected.values, atol=1e-12)

    def test_cutoff_inactive_below_m(self, desk):
        """Below m the cutoff step is the plain step"""
        inc = WienerIncrement(1e-3, np.array([0.01, 0.02]))
        cut = step_mild_cutoff(desk.u0, desk, 1e-3, inc, CutoffSpec(10.0), running_sup=desk.u0.sup())
        assert np.array_equal(cut.values, step_mild(desk.u0, desk, 1e-3, inc).values)

    def test_nonlinear_noise_localised(self, pi_grid):
        """Beyond 2m the localised nonlinear equation freezes to pure heat flow"""
        u0 = ScalarField.cosine_mode(pi_grid, 1, 0, 0.5) + ScalarField.constant(pi_grid, 1.0)
        source = SourceSpec.zero(c2=0.0, mu_prime=1.0, n=2.0)
        params = build_model(1.0, source, NonlinearNoiseSpec((0.5,), 4.0, 1.0), u0)
        inc = WienerIncrement(1e-3, np.array([0.3]))
        cut = step_mild_cutoff(u0, params, 1e-3, inc, CutoffSpec(0.5), running_sup=2.0)
        assert np.allclose(cut.values, heat_semigroup(u0, 1e-3).values, atol=1e-12)


class TestRunTrajectory:
    """Test trajectory recording"""

    def test_heat_matches_analytic(self, pi_grid):
        """Heat-only path equals e^{-tA} u0 at every recorded time"""
        u0 = ScalarField.cosine_mode(pi_grid, 1, 1, 0.5) + ScalarField.constant(pi_grid, 1.0)
        record = run_trajectory(heat_only(pi_grid, u0), 0.1, 0.01, SeedContext(0),
                                IntegratorOptions(store_fields=True))
        for t, values in zip(record.times, record.fields):
            exact = 1.0 + 0.5 * math.exp(-2.0 * t) * (u0.values - 1.0) / 0.5
            assert np.abs(values - exact).max() <= 1e-10

    def test_logistic_matches_analytic(self, pi_grid):
        """Constant data under g = u(1 - u) follows 1/(1 + e^{-t})"""
        u0 = ScalarField.constant(pi_grid, 0.5)
        params = build_model(0.0, SourceSpec.logistic(1.0), LinearNoiseSpec.named(()), u0, enforce=False)
        record = run_trajectory(params, 1.0, 1e-3, SeedContext(0))
        exact = 1.0 / (1.0 + np.exp(-np.asarray(record.times)))
        assert np.abs(np.asarray(record.sup_norms) - exact).max() < 1e-3
        assert np.ptp(record.final_values) < 1e-12

    def test_step_count(self):
        """T must be a multiple of dt"""
        assert step_count(1.0, 1e-3) == 1000
        with pytest.raises(ValueError):
            step_count(1.0, 0.3)

    def test_record_shape(self, desk):
        """One entry per grid time, one scale per step"""
        record = run_trajectory(desk, 0.02, 1e-3, SeedContext(0),
                                IntegratorOptions(lp_list=(2.0, 3.0), store_fields=True))
        assert record.status == RunStatus.COMPLETED
        assert record.n_steps == 20
        assert len(record.sup_norms) == 21
        assert set(record.lp_norms) == {2.0, 3.0}
        assert len(record.drift_scales) == 20
        assert len(record.increments) == 20
        assert record.times[-1] == pytest.approx(0.02)
        assert record.running_sup == sorted(record.running_sup)

    def test_reproducible(self, desk):
        """Same seed context, same path"""
        a = run_trajectory(desk, 0.02, 1e-3, SeedContext(3, 1))
        b = run_trajectory(desk, 0.02, 1e-3, SeedContext(3, 1))
        c = run_trajectory(desk, 0.02, 1e-3, SeedContext(3, 2))
        assert a.sup_norms == b.sup_norms
        assert a.sup_norms != c.sup_norms

    def test_nonnegative_with_clip(self, desk):
        """Clipping keeps every stored field nonnegative"""
        record = run_trajectory(desk, 0.05, 1e-3, SeedContext(0), IntegratorOptions(store_fields=True))
        assert min(float(f.min()) for f in record.fields) >= 0.0
        assert all(m >= 0.0 for m in record.clip_masses)

    def test_stop_at_threshold(self, desk):
        """A path stops at the first grid time with sup >= the threshold"""
        record = run_trajectory(desk, 0.05, 1e-3, SeedContext(0), IntegratorOptions(stop_at=1.0))
        assert record.status == RunStatus.STOPPED_AT_TAU
        assert record.n_steps == 0
        assert detect_stopping(record, 1.0) == 0

    def test_tau_hits(self, desk):
        """Threshold hitting times are recorded without stopping"""
        record = run_trajectory(desk, 0.02, 1e-3, SeedContext(0),
                                IntegratorOptions(tau_thresholds=(1.0, 100.0)))
        assert record.status == RunStatus.COMPLETED
        assert record.tau_m_hits[1.0] == 0.0
        assert record.tau_m_hits[100.0] is None

    def test_snapshots(self, desk):
        """Snapshots land at the nearest grid time"""
        record = run_trajectory(desk, 0.01, 1e-3, SeedContext(0),
                                IntegratorOptions(snapshot_times=(0.0, 0.005, 0.01)))
        assert sorted(record.snapshots) == [0.0, 0.005, 0.01]
        assert np.array_equal(record.snapshots[0.0].values, desk.u0.values)
        assert np.array_equal(record.snapshots[0.01].values, record.final_values)

    def test_divergence_is_a_result(self):
        """Concentrated mass without damping hits the ceiling and ends the path"""
        params = blowup_params(32, None)
        record = run_trajectory(params, 0.01, 1e-4, SeedContext(0), IntegratorOptions(ceiling=5000.0))
        assert record.status == RunStatus.DIVERGED
        assert record.diverged_at is not None
        assert record.times[-1] < record.diverged_at

    def test_summary_and_rows(self, desk):
        """Summary and CSV rows expose the recorded series"""
        record = run_trajectory(desk, 0.003, 1e-3, SeedContext(0), IntegratorOptions(lp_list=(2.0,)))
        rows = record.series_rows()
        assert len(rows) == 4
        assert set(rows[0]) == {"t", "sup_norm", "mass", "min_value", "L2"}
        summary = record.summary()
        assert summary["status"] == "completed"
        assert summary["max_sup"] == max(record.sup_norms)

    def test_detect_stopping_none(self):
        """No crossing gives None"""
        record = TrajectoryRecord(dt=0.1, sup_norms=[1.0, 2.0])
        assert detect_stopping(record, 3.0) is None
        assert detect_stopping(record, 2.0) == 1


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
