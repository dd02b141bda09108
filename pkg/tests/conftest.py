import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(1234))


def max_rel_err(a: dict, b: dict, floor: float = 1e-8) -> float:
    worst = 0.0
    for key in a:
        denom = np.maximum(np.maximum(np.abs(a[key]), np.abs(b[key])), floor)
        worst = max(worst, float(np.max(np.abs(a[key] - b[key]) / denom)))
    return worst
