import numpy as np
import pytest

from mfe import ModelParams, RewardFn


@pytest.fixture
def base_params():
    """Benchmark defaults with slow symmetric resource flips."""
    return ModelParams(
        lam=1.0, gamma=0.95, beta=20.0, mu01=0.1, mu10=0.1,
        reward=RewardFn.inverse_n(),
    )


def random_params(rng: np.random.Generator) -> ModelParams:
    """A well-posed random parameter draw for property tests."""
    kinds = (
        RewardFn.inverse_n(),
        RewardFn.inverse_n_squared(),
        RewardFn.inverse_sqrt_n(),
    )
    return ModelParams(
        lam=float(rng.uniform(0.5, 2.0)),
        gamma=float(rng.uniform(0.8, 0.99)),
        beta=float(rng.uniform(1.0, 25.0)),
        mu01=float(rng.uniform(0.05, 20.0)),
        mu10=float(rng.uniform(0.05, 20.0)),
        reward=kinds[int(rng.integers(len(kinds)))],
    )
