"""Shared fixtures for the lab's test suite."""

from pathlib import Path

import numpy as np
import pytest

from modules.core.config import RunConfig, with_overrides
from modules.environment.mgc_env import MgcEnv
from modules.harness.catalog import catalog_entry
from modules.network.topology import Line, NetworkTopology, load_network

REPO_ROOT = Path(__file__).resolve().parents[1]
DATA_DIR = REPO_ROOT / "data"
CONFIG_DIR = REPO_ROOT / "configs"


@pytest.fixture
def data_dir() -> Path:
    return DATA_DIR


@pytest.fixture
def ieee33() -> NetworkTopology:
    return load_network(DATA_DIR / "networks" / "ieee33.json")


@pytest.fixture
def toy6() -> NetworkTopology:
    return load_network(DATA_DIR / "networks" / "toy6.json")


def two_bus(r: float = 0.01, x: float = 0.02, b: float = 0.0) -> NetworkTopology:
    return NetworkTopology(buses=[1, 2], lines=[Line(1, 2, r, x, b)], slack_bus=1, base_mva=1.0)


@pytest.fixture
def toy_scenario():
    scenario, _ = catalog_entry("toy")
    return scenario


@pytest.fixture
def toy_env(toy_scenario) -> MgcEnv:
    return MgcEnv.from_scenario(toy_scenario, DATA_DIR)


@pytest.fixture
def tiny_run() -> RunConfig:
    """Run settings small enough for unit tests"""
    return with_overrides(RunConfig(), batch_size=2, iterations=2, hidden_sizes=[8], seeds=[0],
                          eval_episodes=2, checkpoint_every=0, critic_epochs=2)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
