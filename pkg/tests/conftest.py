from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    deadline=None,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_points(rng, n, dims, bits=62, distinct=None):
    """Random uint64 points; ``distinct`` limits each dimension to that many values."""
    top = (1 << bits) - 1
    if distinct is None:
        return rng.integers(0, top, size=(n, dims), dtype=np.uint64, endpoint=True)
    values = rng.integers(0, top, size=(distinct, dims), dtype=np.uint64, endpoint=True)
    pick = rng.integers(0, distinct, size=(n, dims))
    return values[pick, np.arange(dims)]


def id_set(coords, ids):
    return sorted(zip(map(tuple, np.asarray(coords).tolist()), np.asarray(ids).tolist()))
