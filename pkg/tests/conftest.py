import numpy as np
import pytest
from hypothesis import settings

from sirtgp.sim import SimConfig, generate_session

settings.register_profile("ci", max_examples=40, deadline=None)
settings.load_profile("ci")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_session():
    """Short labeled session: 3 characters, 2 sequences, 4 channels, 24 samples."""
    corr = tuple(tuple(1.0 if a == b else 0.2 for b in range(4)) for a in range(4))
    cfg = SimConfig(K=4, T=24, S=2, text="CAT", centers=(0.35, 0.45), Sigma1=corr, Sigma0=corr, seed=3)
    return generate_session(cfg)


@pytest.fixture(scope="session")
def baseline_session():
    return generate_session(SimConfig(seed=11))
