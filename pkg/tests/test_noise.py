"""
Tests for counter-keyed Brownian increments and the stochastic convolution.
"""
import math

import numpy as np
import pytest

from engine.fields import ScalarField, build_grid, to_spectral
from engine.model import LinearNoiseSpec, NonlinearNoiseSpec, validate_H1
from engine.noise import (
    SeedContext,
    WienerIncrement,
    diffusion_fields,
    nonlinear_diffusion_fields,
    sample_increment,
    stochastic_convolution,
    stochastic_convolution_path,
)
from engine.operators import heat_semigroup


def certified(kappas, profile="identity"):
    spec = LinearNoiseSpec.named(kappas, profile)
    rep = validate_H1(spec)
    return LinearNoiseSpec(spec.kappas, spec.profile, spec.profile_name, K=rep.values["K"])


class TestIncrements:
    """Test increment sampling"""

    def test_pure_function_of_key(self):
        """Same (seed, path, step) gives the same draw"""
        a = sample_increment(SeedContext(5, 2), 17, 0.01, 3)
        b = sample_increment(SeedContext(5, 2), 17, 0.01, 3)
        assert np.array_equal(a.dWs, b.dWs)

    def test_order_independent(self):
        """Drawing steps in any order gives the same increments"""
        ctx = SeedContext(1, 0)
        forward = [sample_increment(ctx, j, 0.01, 2).dWs for j in range(5)]
        backward = [sample_increment(ctx, j, 0.01, 2).dWs for j in reversed(range(5))][::-1]
        assert all(np.array_equal(f, b) for f, b in zip(forward, backward))

    def test_distinct_keys(self):
        """Different paths, steps and seeds draw differently"""
        base = sample_increment(SeedContext(0, 0), 0, 1.0, 4).dWs
        assert not np.array_equal(base, sample_increment(SeedContext(0, 1), 0, 1.0, 4).dWs)
        assert not np.array_equal(base, sample_increment(SeedContext(0, 0), 1, 1.0, 4).dWs)
        assert not np.array_equal(base, sample_increment(SeedContext(1, 0), 0, 1.0, 4).dWs)

    def test_paths_uncorrelated(self):
        """Paths 0 and 1 of one seed draw independent increments"""
        a = np.concatenate([sample_increment(SeedContext(0, 0), j, 1.0, 1000).dWs for j in range(200)])
        b = np.concatenate([sample_increment(SeedContext(0, 1), j, 1.0, 1000).dWs for j in range(200)])
        assert abs(np.corrcoef(a, b)[0, 1]) < 0.01

    def test_variance(self):
        """Increments have variance dt"""
        ctx = SeedContext(3)
        draws = np.array([sample_increment(ctx, j, 0.04, 2).dWs for j in range(5000)])
        assert draws.mean() == pytest.approx(0.0, abs=0.01)
        assert draws.var() == pytest.approx(0.04, rel=0.05)

    def test_substeps_share_path(self):
        """A coarse step equals the sum of the fine steps it covers"""
        ctx = SeedContext(9, 3)
        coarse = sample_increment(ctx, 2, 0.004, 3, substeps=4).dWs
        fine = sum(sample_increment(ctx, 8 + i, 0.001, 3).dWs for i in range(4))
        assert np.allclose(coarse, fine, atol=1e-15)

    def test_zero_modes(self):
        """K = 0 gives an empty increment"""
        inc = sample_increment(SeedContext(0), 0, 0.1, 0)
        assert inc.k_modes == 0

    def test_rejects_bad_dt(self):
        """dt must be positive"""
        with pytest.raises(ValueError):
            sample_increment(SeedContext(0), 0, 0.0, 2)

    def test_for_path(self):
        """for_path keeps the master seed"""
        assert SeedContext(4, 0).for_path(7) == SeedContext(4, 7)


class TestDiffusion:
    """Test the diffusion coefficients"""

    def test_linear(self, pi_grid):
        """sigma_i(u) = kappa_i h(u)"""
        u = ScalarField.constant(pi_grid, 2.0)
        fields = diffusion_fields(u, certified((0.1, 0.3)))
        assert [f.values[0, 0] for f in fields] == pytest.approx([0.2, 0.6])

    def test_linear_needs_certificate(self, pi_grid):
        """Uncertified specs are refused"""
        with pytest.raises(ValueError):
            diffusion_fields(ScalarField.constant(pi_grid, 1.0), LinearNoiseSpec.named((0.1,)))

    def test_nonlinear(self, pi_grid):
        """b_i ||u||_q^r u on a constant field"""
        spec = NonlinearNoiseSpec((0.5, 0.25), 4.0, 1.0, certified=True)
        u = ScalarField.constant(pi_grid, 2.0)
        norm = 2.0 * (math.pi ** 2) ** 0.25
        fields = nonlinear_diffusion_fields(u, spec)
        assert fields[0].values[3, 3] == pytest.approx(0.5 * norm * 2.0)
        assert fields[1].values[0, 0] == pytest.approx(0.25 * norm * 2.0)


class TestStochasticConvolution:
    """Test the discrete stochastic convolution"""

    def _path(self, grid, n_steps, k_modes=2):
        h_path = [[ScalarField.cosine_mode(grid, i + 1, j % 2) for i in range(k_modes)]
                  for j in range(n_steps)]
        ctx = SeedContext(11)
        increments = [sample_increment(ctx, j, 0.01, k_modes) for j in range(n_steps)]
        return h_path, increments

    def test_zero_at_start(self, pi_grid):
        """M(0) = 0"""
        h_path, incs = self._path(pi_grid, 3)
        assert np.all(stochastic_convolution(h_path, incs, 0.01, 0).values == 0.0)

    def test_recursion_matches_sum(self, pi_grid):
        """The one-step recursion equals the direct sum at every index"""
        h_path, incs = self._path(pi_grid, 6)
        path = stochastic_convolution_path(h_path, incs, 0.01)
        for j in (1, 3, 6):
            direct = stochastic_convolution(h_path, incs, 0.01, j)
            assert np.allclose(path[j].values, direct.values, atol=1e-13)

    def test_single_kick(self, pi_grid):
        """One step is e^{-dt A} sum_i h_i dW_i"""
        h_path, incs = self._path(pi_grid, 1)
        kick = sum((h * float(dw) for h, dw in zip(h_path[0], incs[0].dWs)),
                   ScalarField.constant(pi_grid, 0.0))
        expected = heat_semigroup(kick, 0.01)
        assert np.allclose(stochastic_convolution(h_path, incs, 0.01, 1).values,
                           expected.values, atol=1e-13)

    def test_stationary_variance(self):
        """A constant cos x forcing settles at variance e^{-2dt} dt / (1 - e^{-2dt}), near 1/2"""
        grid = build_grid(4, 4, math.pi, math.pi)
        dt, n_steps, burn = 0.05, 100_000, 400
        h = np.broadcast_to(ScalarField.cosine_mode(grid, 1, 0).values, (n_steps, 1) + grid.shape)
        dW = math.sqrt(dt) * np.random.default_rng(2).standard_normal((n_steps, 1))
        path = stochastic_convolution_path(h, dW, dt, grid=grid)
        amps = np.array([to_spectral(m).mode(1, 0) for m in path[burn:]])
        decay = math.exp(-2.0 * dt)
        assert amps.var() == pytest.approx(decay * dt / (1.0 - decay), rel=0.1)
        assert decay * dt / (1.0 - decay) == pytest.approx(0.5, rel=0.1)

    def test_index_out_of_range(self, pi_grid):
        """t_index beyond the path is refused"""
        h_path, incs = self._path(pi_grid, 2)
        with pytest.raises(IndexError):
            stochastic_convolution(h_path, incs, 0.01, 3)

    def test_raw_array_needs_grid(self, pi_grid):
        """Stacked arrays carry no grid"""
        h = np.zeros((2, 1) + pi_grid.shape)
        with pytest.raises(ValueError):
            stochastic_convolution(h, [WienerIncrement(0.01, np.zeros(1))] * 2, 0.01, 1)
        out = stochastic_convolution(h, [WienerIncrement(0.01, np.zeros(1))] * 2, 0.01, 1,
                                     grid=pi_grid)
        assert out.sup() == 0.0


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
