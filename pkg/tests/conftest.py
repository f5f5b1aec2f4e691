import numpy as np
import pytest

from piengine.config import RunConfig


@pytest.fixture
def rng():
    return np.random.default_rng(7)


@pytest.fixture
def run_config():
    """Defaults with progress bars off and a fixed seed"""
    return RunConfig(values={"run": {"seed": 11, "jobs": 1, "show_progress": False}})
