import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from zipfgrid.gridworld import generate_world

WORLD_SEED = 2022


@pytest.fixture(scope="session")
def world20():
    """The default benchmark world: 20 maps x 20 objects."""
    return generate_world(WORLD_SEED, 20, 20)


@pytest.fixture(scope="session")
def world_small():
    """Reduced world for fast closed-loop tests: 5 maps x 6 objects."""
    return generate_world(11, 5, 6)
