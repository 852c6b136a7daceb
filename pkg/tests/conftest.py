import numpy as np
import pytest

from planereg.geometry import _quaternion_to_rotation


def random_rotations(n: int, seed: int = 0) -> np.ndarray:
    """Uniformly distributed rotation matrices, shape (n, 3, 3)."""
    rng = np.random.default_rng(seed)
    q = rng.standard_normal((n, 4))
    return _quaternion_to_rotation(q)


@pytest.fixture
def rotations():
    return random_rotations
