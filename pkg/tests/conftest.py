import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def rand_tensor(rng, shape, scale=1.0, dtype=np.float64, requires_grad=True):
    """Uniform(-scale, scale) tensor for gradient checks."""
    from jscar.tensor import Tensor

    data = rng.uniform(-scale, scale, size=shape).astype(dtype)
    return Tensor(data, requires_grad=requires_grad)
