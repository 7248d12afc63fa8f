import math
import os

import numpy as np
import pytest
from hypothesis import settings

from vpoc.scene import Berry, CameraPose, Leaf, PlantScene, Ripeness

settings.register_profile("default", deadline=None, max_examples=60)
settings.register_profile("ci", deadline=None, max_examples=200)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def single_berry_scene(center=(0.0, 0.0, 0.05), radius=0.02, ripe=True, leaves=(), seed=0):
    return PlantScene((Berry(tuple(center), radius, Ripeness.RIPE if ripe else Ripeness.UNRIPE),), tuple(leaves), seed)


@pytest.fixture
def top_pose():
    # straight above is degenerate, so look down from just off the zenith
    return CameraPose(0.0, math.radians(10.0), 0.5)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def blocking_leaf(berry_center, height=0.1, semi=0.05):
    return Leaf((berry_center[0], berry_center[1], height), (0.0, 0.0, 1.0), (semi, semi))


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
