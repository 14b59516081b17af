import numpy as np
import pytest

from geocurve import synth
from geocurve.eikonal import solve_distance


@pytest.fixture(scope="session")
def plane51():
    return synth.generate_plane(51)


@pytest.fixture(scope="session")
def plane101():
    return synth.generate_plane(101)


@pytest.fixture(scope="session")
def sphere4():
    return synth.generate_sphere(4)


@pytest.fixture(scope="session")
def sphere5():
    return synth.generate_sphere(5)


@pytest.fixture(scope="session")
def plane51_field(plane51):
    return solve_distance(plane51, 51 * 51 // 2)


@pytest.fixture(scope="session")
def sphere4_field(sphere4):
    return solve_distance(sphere4, 0)


@pytest.fixture(scope="session")
def small_faces():
    """Three subjects, three expressions each, at the minimum resolution."""
    return synth.generate_dataset(subjects=3, expressions=3, seed=11, resolution=32)


def fourier_loop(rng, harmonics=3, M=100, scale=1.0):
    """Random smooth closed curve sampled uniformly in its parameter."""
    s = np.arange(M) / M * 2 * np.pi
    pts = np.column_stack([np.cos(s), 0.8 * np.sin(s), np.zeros(M)]) * scale
    for h in range(2, harmonics + 1):
        a = rng.normal(0.0, 0.12 / h, size=(3, 2))
        pts += np.column_stack([a[i, 0] * np.cos(h * s) + a[i, 1] * np.sin(h * s)
                                for i in range(3)]) * scale
    return pts
