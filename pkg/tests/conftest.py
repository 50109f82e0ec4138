import numpy as np
import pytest

from eigenecho.metric import build_torus_example, identity_family

X_OBS = np.array([1.0, 2.0])
BUMP = (X_OBS, 2.5)


@pytest.fixture(scope="session")
def constant_family():
    """Constant-coefficient torus example (bump identically one)."""
    return build_torus_example(1.0, 0.0, 0.0, 1.0, 1.0, epsilon=0.05,
                               label="torus-constant")


@pytest.fixture(scope="session")
def bump_family():
    """Torus example localised by the standard radial bump at the observation point."""
    return build_torus_example(1.0, 0.0, 0.0, 1.0, 1.0, epsilon=0.05, bump=BUMP,
                               label="torus-bump")


@pytest.fixture(scope="session")
def parallel_family():
    """Degenerate example: the two traceless direction vectors are parallel."""
    return build_torus_example(1.0, 0.0, 2.0, 0.0, 1.0, epsilon=0.05,
                               label="torus-parallel")


@pytest.fixture(scope="session")
def trivial_family():
    return identity_family(epsilon=0.05)
