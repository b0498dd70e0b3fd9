import numpy as np
import pytest

from movingframe.tensor_algebra import GroupElement, TruncatedTensor, group_exp


def random_tensor(rng, d, m, scalar=0.0):
    return TruncatedTensor([np.array(scalar)] + [rng.standard_normal((d,) * j) for j in range(1, m + 1)], d)


def random_lie(rng, d, m):
    """Level-1 vector plus antisymmetric level-2 part (and arbitrary level 3 left zero)."""
    a = rng.standard_normal(d)
    blocks = [np.zeros(()), a]
    if m >= 2:
        M = rng.standard_normal((d, d))
        blocks.append(0.5 * (M - M.T))
    for j in range(3, m + 1):
        blocks.append(np.zeros((d,) * j))
    return TruncatedTensor(blocks, d)


def random_geometric(rng, d, m):
    return group_exp(random_lie(rng, d, m))


def random_group(rng, d, m):
    return GroupElement([np.ones(())] + [rng.standard_normal((d,) * j) for j in range(1, m + 1)], d)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
