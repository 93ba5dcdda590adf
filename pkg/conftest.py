"""
Shared fixtures: oracle networks, their discretized models and calibration datasets.
"""
import logging

import numpy as np
import pytest

from thermoloss.components.synth import (
    default_network,
    default_schedule,
    discretize,
    generate_excitation,
    random_network,
    simulate_with_noise,
)


@pytest.fixture(autouse=True)
def restore_root_logging():
    """Commands reconfigure the root logger; undo it after every test."""
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    yield
    root.handlers[:] = handlers
    root.setLevel(level)


@pytest.fixture(scope="session")
def oracle_network():
    return default_network()


@pytest.fixture(scope="session")
def oracle_model(oracle_network):
    return discretize(oracle_network, 1.0)


@pytest.fixture(scope="session")
def calibration_dataset(oracle_model):
    """Noiseless four-step calibration run of the 7-node / 5-source oracle."""
    schedule = default_schedule(oracle_model.n, step_seconds=300.0, rest_seconds=900.0)
    excitation = generate_excitation(schedule, oracle_model.dt)
    return simulate_with_noise(oracle_model, excitation.X, np.zeros(oracle_model.m), 0.0,
                               segments=excitation.segments)


@pytest.fixture(scope="session")
def small_model():
    return discretize(random_network(3, 2, seed=1), 1.0)


def random_excitation(n, K, seed, hold=5, amplitude=2.0):
    """Piecewise-constant random powers, persistently exciting every channel."""
    rng = np.random.default_rng(seed)
    levels = rng.uniform(0.0, amplitude, size=(n, -(-K // hold)))
    return np.repeat(levels, hold, axis=1)[:, :K]
