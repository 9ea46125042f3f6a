import numpy as np
import pytest

from semiscat.potential import BumpPart, Potential
from semiscat.quantum import phase_shifts


@pytest.fixture(scope="session")
def ref_pot():
    return Potential.radial_bump(1.0, plane_offset=2.0)


@pytest.fixture(scope="session")
def half_pot():
    return Potential.radial_bump(0.5, plane_offset=2.0)


@pytest.fixture(scope="session")
def free_pot():
    return Potential.free(3, plane_offset=2.0)


@pytest.fixture(scope="session")
def lumpy_pot():
    """Two overlapping off-center parts, no symmetry."""
    parts = (BumpPart((0.3, -0.1, 0.2), 0.7, 0.8), BumpPart((-0.4, 0.3, -0.1), 0.6, 0.5))
    return Potential(3, parts, 2.5)


@pytest.fixture(scope="session")
def ref_tables(ref_pot):
    return {k: phase_shifts(ref_pot, k) for k in (25.0, 50.0)}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
