"""
Tests for the Picard iteration on a frozen noise path.
"""
import numpy as np
import pytest

from engine.fields import ScalarField
from engine.integrator import CutoffSpec, IntegratorOptions, run_trajectory
from engine.model import LinearNoiseSpec, SourceSpec, build_model
from engine.noise import SeedContext
from engine.operators import heat_semigroup
from engine.picard import (
    PicardReport,
    frozen_increments,
    phi_apply,
    picard_solve,
    picard_sweep,
    running_sup_series,
    sweep_rows,
)
from engine.types import NonnegPolicy

DT = 2.5e-3


def stepper(params, cutoff, T, seed=0):
    return run_trajectory(params, T, DT, SeedContext(seed),
                          IntegratorOptions(nonneg=NonnegPolicy.OFF, cutoff=cutoff, store_fields=True))


class TestPhi:
    """Test the Duhamel map"""

    def test_stepper_is_fixed_point(self, desk):
        """Phi maps the stepper trajectory to itself"""
        cutoff = CutoffSpec(2.0 * desk.u0.sup())
        record = stepper(desk, cutoff, 0.05)
        dW = frozen_increments(SeedContext(0), record.n_steps, DT, desk.noise.k_modes)
        out = phi_apply(record.fields, desk, cutoff, dW, DT)
        assert np.abs(out - np.asarray(record.fields)).max() < 1e-11

    def test_accepts_fields_or_arrays(self, desk):
        """Stored nodal arrays and ScalarFields give the same image"""
        cutoff = CutoffSpec(2.0 * desk.u0.sup())
        record = stepper(desk, cutoff, 0.01)
        dW = frozen_increments(SeedContext(0), record.n_steps, DT, desk.noise.k_modes)
        as_fields = [ScalarField(desk.grid, v) for v in record.fields]
        np.testing.assert_array_equal(phi_apply(record.fields, desk, cutoff, dW, DT),
                                      phi_apply(as_fields, desk, cutoff, dW, DT))

    def test_heat_only_ignores_input(self, pi_grid):
        """Without chemotaxis, source or noise Phi returns the heat flow of u0"""
        u0 = ScalarField.cosine_mode(pi_grid, 1, 2, 0.4) + ScalarField.constant(pi_grid, 1.0)
        params = build_model(0.0, SourceSpec.zero(), LinearNoiseSpec.named(()), u0, enforce=False)
        dW = frozen_increments(SeedContext(0), 4, DT, 0)
        rng = np.random.default_rng(3)
        a = phi_apply(rng.uniform(size=(5,) + pi_grid.shape), params, CutoffSpec(3.0), dW, DT)
        b = phi_apply(np.ones((5,) + pi_grid.shape), params, CutoffSpec(3.0), dW, DT)
        np.testing.assert_array_equal(a, b)
        assert np.abs(a[4] - heat_semigroup(u0, 4 * DT).values).max() < 1e-13

    def test_starts_at_u0(self, desk):
        """Phi(u)(0) = u0 for any input"""
        cutoff = CutoffSpec(3.0)
        traj = np.zeros((4,) + desk.grid.shape) + 2.0
        dW = frozen_increments(SeedContext(1), 3, DT, desk.noise.k_modes)
        out = phi_apply(traj, desk, cutoff, dW, DT)
        assert np.array_equal(out[0], desk.u0.values)

    def test_short_frozen_path(self, desk):
        """The frozen path must cover every step"""
        dW = frozen_increments(SeedContext(0), 2, DT, desk.noise.k_modes)
        traj = np.ones((4,) + desk.grid.shape)
        with pytest.raises(ValueError):
            phi_apply(traj, desk, CutoffSpec(3.0), dW, DT)

    def test_rejects_non_finite(self, desk):
        """Non-finite iterates are refused"""
        traj = np.ones((3,) + desk.grid.shape)
        traj[1, 0, 0] = np.inf
        dW = frozen_increments(SeedContext(0), 2, DT, desk.noise.k_modes)
        with pytest.raises(ValueError):
            phi_apply(traj, desk, CutoffSpec(3.0), dW, DT)

    def test_running_sup(self):
        """Running max of the sup norm"""
        stack = np.array([[[1.0]], [[-3.0]], [[2.0]]])
        assert running_sup_series(stack).tolist() == [1.0, 3.0, 3.0]


class TestPicardSolve:
    """Test the iteration and its report"""

    def test_contracts_and_converges(self, desk):
        """Short horizon: ratios below one, convergence to tol"""
        cutoff = CutoffSpec(2.0 * desk.u0.sup())
        report = picard_solve(desk, cutoff, 0.05, DT, SeedContext(0), tol=1e-9, max_iter=20)
        assert report.converged
        assert report.iterations <= 20
        assert all(r < 1.0 for r in report.ratios)
        assert report.diffs[-1] < 1e-9

    def test_converges_to_stepper(self, desk):
        """The limit is the stepper trajectory on the same path"""
        cutoff = CutoffSpec(2.0 * desk.u0.sup())
        report = picard_solve(desk, cutoff, 0.05, DT, SeedContext(2), tol=1e-11, max_iter=30)
        record = stepper(desk, cutoff, 0.05, seed=2)
        assert np.abs(report.solution - np.asarray(record.fields)).max() < 1e-9

    def test_ratio_grows_with_horizon(self, desk):
        """Longer horizons contract more slowly"""
        cutoff = CutoffSpec(2.0 * desk.u0.sup())
        short = picard_solve(desk, cutoff, 0.025, DT, SeedContext(0), tol=1e-12, max_iter=6)
        long = picard_solve(desk, cutoff, 0.2, DT, SeedContext(0), tol=1e-12, max_iter=6)
        assert short.max_ratio < long.max_ratio

    def test_max_iter_reported(self, desk):
        """Running out of iterations is reported, not raised"""
        report = picard_solve(desk, CutoffSpec(3.0), 0.05, DT, SeedContext(0), tol=1e-30, max_iter=2)
        assert not report.converged
        assert report.iterations == 2

    def test_rejects_zero_iterations(self, desk):
        """max_iter must be positive"""
        with pytest.raises(ValueError):
            picard_solve(desk, CutoffSpec(3.0), 0.05, DT, SeedContext(0), max_iter=0)

    def test_rows_and_summary(self):
        """CSV rows carry the ratio from the second iterate on"""
        report = PicardReport(T=0.1, dt=0.01, m=2.0, diffs=[1.0, 0.5, 0.1], converged=True, tol=0.2)
        rows = report.rows()
        assert rows[0]["ratio"] == ""
        assert rows[1]["ratio"] == pytest.approx(0.5)
        assert report.max_ratio == pytest.approx(0.5)
        assert report.summary()["iterations"] == 3
        assert "pathwise" in report.summary()["note"]

    def test_sweep(self, desk):
        """One report per (T, m), T-major"""
        reports = picard_sweep(desk, [0.025, 0.05], [3.0, 6.0], DT, SeedContext(0), max_iter=5)
        assert [(r.T, r.m) for r in reports] == [(0.025, 3.0), (0.025, 6.0), (0.05, 3.0), (0.05, 6.0)]
        rows = sweep_rows(reports)
        assert set(rows[0]) == {"T", "m", "iter", "diff_sup", "ratio"}
        assert len(rows) == sum(r.iterations for r in reports)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
