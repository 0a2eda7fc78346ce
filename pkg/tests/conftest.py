import numpy as np
import pytest

from jntk import make_activation


def unit_vectors(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    v = rng.standard_normal((count, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


@pytest.fixture(scope="session")
def identity_act():
    return make_activation("identity")


@pytest.fixture(scope="session")
def gelu_act():
    return make_activation("gelu")


@pytest.fixture(scope="session")
def erf_act():
    return make_activation("erf")


@pytest.fixture(scope="session")
def square_raw():
    """Unnormalised z^2 activation (the closed-form oracle convention)."""
    return make_activation("square", normalise=False)


@pytest.fixture(scope="session")
def square_act():
    return make_activation("square")
