import sys
from pathlib import Path

# Agregar el directorio raíz al PYTHONPATH
root_dir = Path(__file__).parent
sys.path.insert(0, str(root_dir))

import numpy as np
import pytest

from app.schemas.mixer import HeadDims
from app.services.mixers import init_layer_params


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_dims():
    return HeadDims(model_dim=6, key_dim=4, value_dim=3, num_heads=2, conv_len=3)


@pytest.fixture
def small_layer(small_dims):
    return init_layer_params(small_dims, np.random.default_rng(7))
