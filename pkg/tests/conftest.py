import numpy as np
import pytest

from vstop.profiles import build_profile, empty_profile


@pytest.fixture(scope="session")
def gauss():
    return build_profile({"mu.kind": "gaussian", "mu.sigma": 1.0, "e0": 1, "alpha": 1.0})


@pytest.fixture(scope="session")
def bump():
    return build_profile({"mu.kind": "truncated_bump", "mu.radius": 2.0})


@pytest.fixture(scope="session")
def empty():
    return empty_profile()


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20260808)
