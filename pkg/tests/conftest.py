"""
Shared fixtures: small icospheres, synthetic cohorts and tiny models
"""

import numpy as np
import pytest

from corticast.schemas.dataset import Split, SyntheticSpec
from corticast.schemas.model import Activation, ModelConfig, Task
from corticast.schemas.training import TrainConfig
from corticast.services.autonet import init_model
from corticast.services.dataset_service import dataset_service
from corticast.services.evaluation_service import evaluation_service
from corticast.services.mesh_service import mesh_service


def central_difference(f, array: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Numerical gradient of scalar f() w.r.t. every entry of array (perturbed in place)"""
    grad = np.zeros_like(array)
    flat = array.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        step = h * max(1.0, abs(original))
        flat[i] = original + step
        plus = f()
        flat[i] = original - step
        minus = f()
        flat[i] = original
        out[i] = (plus - minus) / (2.0 * step)
    return grad


def randomize_running_stats(model, seed: int = 0):
    """Non-trivial eval-mode batchnorm so attribution and eval tests exercise the affine map"""
    rng = np.random.default_rng(seed)
    for name, array in model.arrays.items():
        if name.endswith("running_mean"):
            array[:] = rng.normal(0.0, 0.3, array.shape)
        elif name.endswith("running_var"):
            array[:] = rng.uniform(0.5, 2.0, array.shape)
        elif name.endswith("gamma"):
            array[:] = rng.uniform(0.5, 1.5, array.shape)
        elif name.endswith("beta"):
            array[:] = rng.normal(0.0, 0.2, array.shape)
    return model


@pytest.fixture(scope="session")
def ico2():
    return mesh_service.icosphere(2)


@pytest.fixture(scope="session")
def ico3():
    return mesh_service.icosphere(3)


@pytest.fixture
def small_cohort():
    """40 subjects on an order-1 icosphere (42 vertices), split 32/4/4"""
    dataset, _ = dataset_service.generate_synthetic(40, 1, seed=3)
    return dataset


@pytest.fixture
def tiny_config():
    return ModelConfig(in_channels=4, hidden_units=5, n_blocks=2, out_units=1)


@pytest.fixture
def tiny_model(tiny_config):
    return init_model(tiny_config, seed=11)


@pytest.fixture
def identity_model():
    """Purely affine eval-mode network on 4 channels (16 input cells at 4 vertices)"""
    config = ModelConfig(in_channels=4, hidden_units=3, n_blocks=2, activation=Activation.IDENTITY)
    return randomize_running_stats(init_model(config, seed=5), seed=6).eval()


@pytest.fixture(scope="session")
def trained_synthetic():
    """200 subjects, order 2, sigma 0.5 weeks, trained with the reference recipe"""
    dataset, truth = dataset_service.generate_synthetic(200, 2, seed=2024, spec=SyntheticSpec(noise_sigma=0.5))
    config = TrainConfig(learning_rate=0.001, batch_size=32, patience=200, max_epochs=1500, log_every=500)
    outcome = evaluation_service.train_run(dataset, Task.SCAN_AGE, seed=0, train_config=config)
    return dataset, truth, outcome


@pytest.fixture
def split_sizes():
    def _sizes(dataset):
        return tuple(len(dataset.split(split)) for split in (Split.TRAIN, Split.VAL, Split.TEST))
    return _sizes
