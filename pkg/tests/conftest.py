"""Shared fixtures: the standard [0, pi]^2 and unit-square grids, desk model"""
import math

import pytest

from engine.fields import build_grid
from workflows.acceptance import desk_params


@pytest.fixture
def pi_grid():
    return build_grid(32, 32, math.pi, math.pi)


@pytest.fixture
def unit_grid():
    return build_grid(16, 24, 1.0, 1.0)


@pytest.fixture
def desk():
    """chi = 1, logistic mu = 1, two linear noise modes, u0 = 1 + 0.5 cos x on 16^2"""
    return desk_params(16)
