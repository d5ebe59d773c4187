"""
Shared fixtures for the toolkit tests
"""

import numpy as np
import pytest

from effc_toolkit.analytic import ModelParams
from effc_toolkit.dynamics import Trajectory
from effc_toolkit.streams import make_generator


@pytest.fixture
def fig_params() -> ModelParams:
    """c=1, lambda=0.2, theta=0.4"""
    return ModelParams(c=1.0, lam=0.2)


@pytest.fixture
def half_params() -> ModelParams:
    """c=1, lambda=0.25, theta=0.5"""
    return ModelParams(c=1.0, lam=0.25)


@pytest.fixture
def rng() -> np.random.Generator:
    return make_generator(20240611)


@pytest.fixture
def two_excursion_trajectory(fig_params) -> Trajectory:
    """ceiling 6 -> 5 -> 4 -> 6 -> 5 -> 4 -> 3 -> 6 on [0, 8], one time unit per piece"""
    return Trajectory(
        jump_times=np.arange(1.0, 8.0),
        states=np.array([5, 4, 6, 5, 4, 3, 6]),
        t0_state=6,
        n_max=6,
        t_end=8.0,
        params=fig_params,
    )
