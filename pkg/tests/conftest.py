import numpy as np
import pytest

from orthovis.camera import PoseParams
from orthovis.synth import ArchSpec, make_synthetic_case
from orthovis.teeth import TeethModel, Tooth

ACCEPTANCE_LINES = []


def square_tooth(fdi, half=1.0, z=0.0, center=(0.0, 0.0)):
    """Flat square in the z = const plane, two triangles."""
    cx, cy = center
    v = [(cx - half, cy - half, z), (cx + half, cy - half, z),
         (cx + half, cy + half, z), (cx - half, cy + half, z)]
    return Tooth(fdi, v, [(0, 1, 2), (0, 2, 3)])


def facing_pose(focal=16.0, distance=10.0):
    return PoseParams(focal, [0, 0, 0], [0, 0, distance], [0, 0, 0])


@pytest.fixture
def square_model():
    return TeethModel((square_tooth(11),))


@pytest.fixture(scope="session")
def small_case():
    """A fast synthetic case: 4 teeth per jaw at 96 x 96."""
    return make_synthetic_case(ArchSpec(teeth_per_jaw=4, seed=1, subdivisions=3), size=(96, 96))


@pytest.fixture(scope="session")
def default_case():
    return make_synthetic_case(ArchSpec(seed=0))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
