import pytest

from homodyne_decay import SimConfig


@pytest.fixture
def cfg():
    return SimConfig(gamma=2.3e6, eta=0.3, dt=20e-9, n_steps=100, seed=0, initial_state="-z")
