import numpy as np
import pytest

from unbiased_implicit.core import GroundTruthModel
from unbiased_implicit.synth import SynthConfig, generate_base_matrices, make_ground_truth


def small_truth(seed=0, m=6, n=8):
    rng = np.random.default_rng(seed)
    return GroundTruthModel(rng.uniform(0.05, 0.95, (m, n)), rng.uniform(0.05, 1.0, (m, n)))


def oracle_instance(seed=0):
    """20x30 semi-synthetic instance with p=2 skew and uniform random predictions."""
    config = SynthConfig(num_users=20, num_items=30, p=2.0, seed=seed)
    truth = make_ground_truth(*generate_base_matrices(config), config.epsilon, config.p)
    predictions = np.random.default_rng([seed, 7]).random(truth.shape)
    return truth, predictions


@pytest.fixture
def truth():
    return small_truth()


@pytest.fixture
def predictions(truth):
    return np.random.default_rng(1).uniform(0.01, 0.99, truth.shape)
