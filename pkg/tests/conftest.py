import numpy as np
import pytest

from fsar import tensor as T
from fsar.tensor import Tensor


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def leaf(rng, *shape, dtype=np.float64, scale=1.0):
    """Random leaf tensor that requires gradients."""
    return Tensor(scale * rng.standard_normal(shape).astype(dtype), requires_grad=True)


def scalarize(out: Tensor, rng) -> Tensor:
    """Contract a tensor to a scalar with a fixed random functional."""
    weights = Tensor(rng.standard_normal(out.shape).astype(out.data.dtype))
    return T.tsum(T.mul(out, weights))
