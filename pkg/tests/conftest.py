import numpy as np
import pytest

from fedslice.federation import ExperimentConfig


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def small_config(**overrides) -> ExperimentConfig:
    """A config small enough for unit tests but exercising every moving part."""
    base = dict(
        n_clients=4,
        n_selected=2,
        n_rounds=3,
        local_epochs=5,
        samples_per_client=60,
        attribution_samples=10,
        ig_steps=8,
        seed=42,
    )
    base.update(overrides)
    return ExperimentConfig(**base)
