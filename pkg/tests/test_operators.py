"""
Tests for the spectral operators and the semigroup-estimate certification.
"""
import math

import numpy as np
import pytest

from engine.fields import ScalarField, VectorField, build_grid, lp_norm
from engine.operators import (
    certify_semigroup_estimates,
    chemotaxis_flux_div,
    divergence,
    frac_power_semigroup,
    gradient,
    green_solve,
    heat_semigroup,
    laplacian,
    random_band_limited,
    random_vector_field,
    semigroup_ratios,
    spectrum,
    yosida_apply,
    yosida_convergence,
)


class TestSpectrum:
    """Test the Neumann spectrum tables"""

    def test_eigenvalues(self, pi_grid):
        """lambda[l, k] = k^2 + l^2 on [0, pi]^2"""
        spec = spectrum(pi_grid)
        assert spec.eigenvalues[0, 0] == 0.0
        assert spec.eigenvalues[2, 3] == pytest.approx(13.0)
        assert spec.nu1 == pytest.approx(1.0)

    def test_cached_and_read_only(self, pi_grid):
        """One table per grid, not writable"""
        spec = spectrum(pi_grid)
        assert spectrum(build_grid(32, 32, math.pi, math.pi)) is spec
        with pytest.raises(ValueError):
            spec.eigenvalues[0, 0] = 1.0


class TestSemigroup:
    """Test heat, fractional and resolvent multipliers"""

    def test_heat_on_mode(self, pi_grid):
        """e^{-tA} cos(kx)cos(ly) = e^{-t(k^2+l^2)} cos(kx)cos(ly)"""
        u = ScalarField.cosine_mode(pi_grid, 2, 1)
        out = heat_semigroup(u, 0.3)
        assert np.allclose(out.values, math.exp(-1.5) * u.values, atol=1e-13)

    def test_heat_zero_time(self, pi_grid):
        """e^{0A} is the identity"""
        rng = np.random.default_rng(0)
        u = random_band_limited(pi_grid, rng)
        assert np.allclose(heat_semigroup(u, 0.0).values, u.values, atol=1e-12)

    def test_heat_negative_time(self, pi_grid):
        """Negative times are refused"""
        with pytest.raises(ValueError):
            heat_semigroup(ScalarField.constant(pi_grid, 1.0), -0.1)

    def test_heat_semigroup_law(self, pi_grid):
        """e^{-0.2A} e^{-0.1A} = e^{-0.3A}"""
        u = random_band_limited(pi_grid, np.random.default_rng(8), modes=16)
        twice = heat_semigroup(heat_semigroup(u, 0.1), 0.2)
        assert np.abs(twice.values - heat_semigroup(u, 0.3).values).max() < 1e-12

    def test_heat_preserves_mass(self, pi_grid):
        """The Neumann semigroup conserves the integral"""
        rng = np.random.default_rng(1)
        u = random_band_limited(pi_grid, rng)
        assert heat_semigroup(u, 0.7).integral() == pytest.approx(u.integral(), abs=1e-10)

    def test_frac_power_on_mode(self, pi_grid):
        """(A+1)^beta e^{-tA} multiplies mode (1, 1) by 3^beta e^{-2t}"""
        u = ScalarField.cosine_mode(pi_grid, 1, 1)
        out = frac_power_semigroup(u, 0.5, 0.1)
        assert np.allclose(out.values, math.sqrt(3.0) * math.exp(-0.2) * u.values, atol=1e-13)

    def test_frac_power_needs_positive_t(self, pi_grid):
        """beta > 0 at t = 0 is refused"""
        with pytest.raises(ValueError):
            frac_power_semigroup(ScalarField.constant(pi_grid, 1.0), 0.25, 0.0)

    def test_green_single_mode(self, pi_grid):
        """G cos(kx)cos(ly) = cos(kx)cos(ly)/(1 + lambda) to 1e-12"""
        u = ScalarField.cosine_mode(pi_grid, 3, 2)
        v = green_solve(u)
        assert np.abs(v.values - u.values / 14.0).max() <= 1e-12

    def test_green_constant(self, pi_grid):
        """G c = c"""
        v = green_solve(ScalarField.constant(pi_grid, 2.5))
        assert np.allclose(v.values, 2.5, atol=1e-13)

    def test_green_positive_and_mass_preserving(self, pi_grid):
        """A positive density gives a positive signal with the same integral"""
        u = ScalarField.from_function(pi_grid, lambda X, Y: 0.01 + np.exp(-20 * ((X - 1) ** 2 + (Y - 2) ** 2)))
        v = green_solve(u)
        assert v.values.min() > 0
        assert v.integral() == pytest.approx(u.integral(), rel=1e-12)

    def test_green_rejects_non_finite(self, pi_grid):
        """Diverged input is refused"""
        u = ScalarField(pi_grid, np.full(pi_grid.shape, np.nan), diverged=True)
        with pytest.raises(ValueError):
            green_solve(u)

    def test_green_solves_elliptic_problem(self, pi_grid):
        """-Delta v + v = u"""
        rng = np.random.default_rng(2)
        u = random_band_limited(pi_grid, rng)
        v = green_solve(u)
        assert np.allclose((v - laplacian(v)).values, u.values, atol=1e-10)

    def test_yosida(self, pi_grid):
        """R_n u -> u with ||R_n u - u||_2 decreasing in n"""
        rng = np.random.default_rng(3)
        u = random_band_limited(pi_grid, rng)
        errors = yosida_convergence(u, [10.0, 100.0, 1000.0, 10000.0])
        assert all(b < a for a, b in zip(errors, errors[1:]))
        assert errors[-1] < 0.05 * lp_norm(u, 2)

    def test_yosida_parameter_range(self, pi_grid):
        """n must exceed the spectral gap"""
        with pytest.raises(ValueError):
            yosida_apply(ScalarField.constant(pi_grid, 1.0), 0.5)


class TestDifferentialOperators:
    """Test gradient, divergence and the chemotactic flux"""

    def test_gradient_of_mode(self, pi_grid):
        """grad cos(x)cos(2y) = (-sin x cos 2y, -2 cos x sin 2y)"""
        X, Y = pi_grid.mesh
        g = gradient(ScalarField.cosine_mode(pi_grid, 1, 2))
        assert np.allclose(g.x, -np.sin(X) * np.cos(2 * Y), atol=1e-12)
        assert np.allclose(g.y, -2.0 * np.cos(X) * np.sin(2 * Y), atol=1e-12)

    def test_divergence_of_gradient_is_laplacian(self, pi_grid):
        """div grad = Delta on band-limited fields"""
        rng = np.random.default_rng(4)
        u = random_band_limited(pi_grid, rng)
        assert np.allclose(divergence(gradient(u)).values, laplacian(u).values, atol=1e-9)

    def test_divergence_integrates_to_zero(self, pi_grid):
        """Fluxes with zero normal component carry no net mass"""
        rng = np.random.default_rng(5)
        w = random_vector_field(pi_grid, rng)
        assert abs(divergence(w).integral()) < 1e-10

    def test_gradient_divergence_adjoint(self, pi_grid):
        """<grad u, w> = -<u, div w> for arbitrary nodal data"""
        rng = np.random.default_rng(6)
        u = ScalarField(pi_grid, rng.standard_normal(pi_grid.shape))
        w = VectorField(pi_grid, rng.standard_normal(pi_grid.shape), rng.standard_normal(pi_grid.shape))
        g = gradient(u)
        area = pi_grid.cell_area
        lhs = float(np.sum(g.x * w.x + g.y * w.y)) * area
        rhs = -float(np.sum(u.values * divergence(w).values)) * area
        scale = float(np.sqrt(np.sum(g.x ** 2 + g.y ** 2) * np.sum(w.x ** 2 + w.y ** 2))) * area
        assert abs(lhs - rhs) <= 1e-12 * scale

    def test_flux_with_constant_density(self, pi_grid):
        """div(chi c grad v) = chi c Delta v"""
        u = ScalarField.constant(pi_grid, 1.5)
        v = ScalarField.cosine_mode(pi_grid, 2, 3, 0.7)
        out = chemotaxis_flux_div(u, v, 2.0)
        assert np.abs(out.values - 3.0 * laplacian(v).values).max() < 1e-10

    def test_divergence_rejects_non_finite(self, pi_grid):
        """NaN components are refused"""
        bad = np.full(pi_grid.shape, np.nan)
        with pytest.raises(ValueError):
            divergence(VectorField(pi_grid, bad, bad))

    def test_flux_of_constant_vanishes(self, pi_grid):
        """A constant density has no chemotactic flux"""
        u = ScalarField.constant(pi_grid, 2.0)
        out = chemotaxis_flux_div(u, green_solve(u), 1.0)
        assert np.abs(out.values).max() < 1e-12

    def test_flux_conserves_mass(self, pi_grid):
        """int div(chi u grad v) = 0"""
        u = ScalarField.cosine_mode(pi_grid, 1, 1, 0.5) + ScalarField.constant(pi_grid, 1.0)
        out = chemotaxis_flux_div(u, green_solve(u), 2.0)
        assert abs(out.integral()) < 1e-10

    def test_flux_linear_in_chi(self, pi_grid):
        """Doubling chi doubles the flux"""
        u = ScalarField.cosine_mode(pi_grid, 2, 0, 0.3) + ScalarField.constant(pi_grid, 1.0)
        v = green_solve(u)
        one = chemotaxis_flux_div(u, v, 1.0).values
        two = chemotaxis_flux_div(u, v, 2.0).values
        assert np.allclose(two, 2.0 * one, atol=1e-12)

    def test_flux_rejects_zero_chi(self, pi_grid):
        """chi must be positive"""
        u = ScalarField.constant(pi_grid, 1.0)
        with pytest.raises(ValueError):
            chemotaxis_flux_div(u, u, 0.0)


class TestCertification:
    """Test the empirical semigroup-estimate certification"""

    def test_ratios_present(self, pi_grid):
        """All estimates report for p in [2, inf) with beta > 0"""
        rng = np.random.default_rng(6)
        omega = random_band_limited(pi_grid, rng)
        w = random_vector_field(pi_grid, rng)
        ratios = semigroup_ratios(omega, 0.1, 4.0, 0.25, w)
        assert set(ratios) == {"A1", "A2", "A3", "A4", "A5"}
        assert all(math.isfinite(r) and r > 0 for r in ratios.values())

    def test_no_a3_at_inf(self, pi_grid):
        """A3 is only defined for finite p"""
        rng = np.random.default_rng(7)
        ratios = semigroup_ratios(random_band_limited(pi_grid, rng), 0.1, math.inf, 0.0)
        assert "A3" not in ratios
        assert "A4" not in ratios

    def test_a1_at_zero_beta_bounded(self, pi_grid):
        """||e^{-tA} w||_2 <= e^{-nu1 t}||w||_2 on mean-free fields"""
        omega = ScalarField.cosine_mode(pi_grid, 1, 0)
        ratio = semigroup_ratios(omega, 0.5, 2.0, 0.0)["A1"]
        assert ratio == pytest.approx(1.0, rel=1e-10)

    def test_report_rows_and_summary(self):
        """One row per (estimate, p, beta, t); summary maxes over t"""
        grid = build_grid(16, 16, math.pi, math.pi)
        report = certify_semigroup_estimates(grid, 3, [0.01, 0.1], [2.0, math.inf], [0.0, 0.25], seed=1)
        assert report.all_finite()
        summary = report.summary()
        assert ("A4", 2.0, 0.25) in summary
        assert ("A2", 2.0, None) in summary
        assert summary[("A5", math.inf, None)] == report.max_ratio("A5", math.inf)
        assert len({r.t for r in report.rows}) == 2

    def test_deterministic(self):
        """Same seed gives the same report"""
        grid = build_grid(16, 16, math.pi, math.pi)
        a = certify_semigroup_estimates(grid, 2, [0.1], [2.0], [0.25], seed=3).summary()
        b = certify_semigroup_estimates(grid, 2, [0.1], [2.0], [0.25], seed=3).summary()
        assert a == b

    def test_rejects_empty(self, pi_grid):
        """Empty lists are refused"""
        with pytest.raises(ValueError):
            certify_semigroup_estimates(pi_grid, 1, [], [2.0], [0.0])


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
