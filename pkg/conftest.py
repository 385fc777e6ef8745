"""Shared pytest fixtures: seeded generators, tiny float64 networks and batches"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import numpy as np
import pytest

from core.fixtures import make_loss_fixture, random_batch, tiny_agent_nets
from utils.rng import make_stream


@pytest.fixture
def rng():
    return make_stream(0, "tests")


@pytest.fixture
def nets(rng):
    return tiny_agent_nets(rng)


@pytest.fixture
def batch(rng):
    return random_batch(rng, 4)


@pytest.fixture
def loss_fixture(rng):
    return make_loss_fixture(rng, n_items=3)


@pytest.fixture
def frame_stack(rng):
    """(2, 12, 12) stack in [0, 1]"""
    return rng.random((2, 12, 12))


@pytest.fixture
def impulse():
    """Single bright pixel at row 5, column 6 of a 12×12 frame"""
    x = np.zeros((1, 12, 12))
    x[0, 5, 6] = 1.0
    return x
