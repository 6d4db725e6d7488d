import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "repo", deadline=None, derandomize=True, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repo")

# settings small enough for the 200-protein fixture to run in seconds
FAST = dict(walk_length=20, walks_per_node=4, emb_dim=16, emb_epochs=1, d2=32, d3=64,
            batch_size=8, struct_lr=2e-3, prop_lr=0.01, prop_epochs=50)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def fixture_dataset():
    from msprop.fixture import synth_fixture
    from msprop.pipeline import dataset_from_bundle

    return dataset_from_bundle(synth_fixture(seed=0))


@pytest.fixture(autouse=True)
def _quiet_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        yield
