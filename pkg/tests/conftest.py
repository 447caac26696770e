"""Session-scoped training fixtures shared by the trainer invariants and the
acceptance suite, so the multi-seed runs on the default synthetic dataset are
paid for once."""

import numpy as np
import pytest

from xmem.config import HyperParams
from xmem.data import SyntheticSpec, generate
from xmem.trainer import AblationConfig, train

SEEDS = (7, 8, 9, 10, 11)


@pytest.fixture(scope="session")
def default_dataset():
    """The default synthetic dataset: C=10, 500 recipes, seed 7."""
    return generate(SyntheticSpec(seed=7))


def _train_arm(dataset, arm: AblationConfig):
    runs = {}
    for seed in SEEDS:
        hp = HyperParams(seed=seed)
        params, log = train(dataset, hp, ablation=arm)
        runs[seed] = (params, log)
    return runs


@pytest.fixture(scope="session")
def full_runs(default_dataset):
    """Full configuration (every component on), five seeds."""
    return _train_arm(default_dataset, AblationConfig(True, True, True, True))


@pytest.fixture(scope="session")
def tl_runs(default_dataset):
    """Plain triplet arm: no mining, no alignment, no translation."""
    return _train_arm(default_dataset, AblationConfig(False, False, False, False))


@pytest.fixture(scope="session")
def tlhm_runs(default_dataset):
    """Triplet + hard mining only."""
    return _train_arm(default_dataset, AblationConfig(True, False, False, False))


@pytest.fixture(scope="session")
def ma_off_runs(default_dataset):
    """Everything but modality alignment."""
    return _train_arm(default_dataset, AblationConfig(True, False, True, True))
