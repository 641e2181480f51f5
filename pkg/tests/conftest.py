import numpy as np
import pytest

from signadv import attack as attack_lib
from signadv import model as model_lib
from signadv import signs as signs_lib


@pytest.fixture(scope="session")
def tiny_dataset():
    return signs_lib.generate_dataset(24, seed=3)


@pytest.fixture(scope="session")
def tiny_params(tiny_dataset):
    """A weak but functional classifier for mechanics tests."""
    params, _ = model_lib.train(
        tiny_dataset, model_lib.TrainConfig(epochs=4, batch_size=32, seed=1)
    )
    return params


@pytest.fixture(scope="session")
def canonical32():
    return signs_lib.render_sign(signs_lib.REFERENCE_CLASSES[0], 32, 5)


@pytest.fixture(scope="session")
def region32():
    return signs_lib.sign_region_mask(signs_lib.REFERENCE_CLASSES[0], 32)


@pytest.fixture(scope="session")
def sign_mask32(region32):
    return attack_lib.region_mask(region32)


def float64_params(params: model_lib.ModelParameters) -> model_lib.ModelParameters:
    return model_lib.ModelParameters(
        architecture_id=params.architecture_id,
        class_count=params.class_count,
        input_side=params.input_side,
        tensors={k: v.astype(np.float64) for k, v in params.tensors.items()},
    )
