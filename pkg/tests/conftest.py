"""
Shared fixtures: seeded generators, small synthetic clouds and cameras.
"""

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.config import preset
from src.synthetic import make_cloud, make_dynamic_sequence, orbit_cameras


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_cloud():
    return make_cloud(600, sh_degree=0, seed=3)


@pytest.fixture
def sh_cloud():
    return make_cloud(600, sh_degree=2, seed=5)


@pytest.fixture
def cameras():
    return orbit_cameras(2, width=32, height=32)


@pytest.fixture
def dynamic_sequence():
    return make_dynamic_sequence(n=300, frame_count=60, gof_len=30, seed=7)


@pytest.fixture
def fast_config():
    """Static preset with a short VQ fit so container tests stay quick."""
    config = preset("static-gscodec")
    config.vq.size = 64
    config.vq.iters = 5
    config.plas.proposals_per_point = 4
    return config
