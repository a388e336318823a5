import numpy as np
import pytest

from livo.manifold import FullState, exp_so3


def random_rotation(rng, max_angle=np.pi * 0.99):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return exp_so3(axis * rng.uniform(0.0, max_angle))


def random_state(rng):
    return FullState(
        R_GI=random_rotation(rng),
        p_GI=rng.normal(size=3),
        v_G=rng.normal(size=3),
        b_g=0.01 * rng.normal(size=3),
        b_a=0.1 * rng.normal(size=3),
        g_G=np.array([0.0, 0.0, -9.81]) + 0.1 * rng.normal(size=3),
        R_IC=random_rotation(rng),
        p_IC=0.1 * rng.normal(size=3),
        t_IC=0.01 * rng.normal(),
        intrinsics=np.array([500.0, 500.0, 320.0, 240.0]) + rng.normal(size=4),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
