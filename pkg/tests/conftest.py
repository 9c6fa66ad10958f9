import numpy as np
import pytest

from aggsplit import BenchmarkParams, benchmark_steps, generate_benchmark


@pytest.fixture(scope="session")
def desk_game():
    """Small full benchmark instance (aggregate-coupled costs)."""
    return generate_benchmark(BenchmarkParams(N=5, n=3, seed=11))


@pytest.fixture(scope="session")
def desk_steps():
    return benchmark_steps(5)


@pytest.fixture(scope="session")
def monotone_game():
    """Aggregate-independent costs: the extended gradient map is monotone."""
    return generate_benchmark(
        BenchmarkParams(N=20, n=5, q_range=(0.0, 0.0), qbar_range=(0.0, 0.0), seed=3)
    )


@pytest.fixture(scope="session")
def monotone_steps():
    return benchmark_steps(20)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
