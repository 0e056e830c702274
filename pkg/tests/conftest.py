import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("ci", max_examples=200, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def mc_within(observed: float, expected: float, reps: int, sigmas: float = 3.0) -> bool:
    """Whether a simulated proportion lies within ``sigmas`` binomial SEs."""
    se = np.sqrt(max(expected * (1.0 - expected), 1e-12) / reps)
    return abs(observed - expected) <= sigmas * se
