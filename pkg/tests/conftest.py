import numpy as np
import pytest

from breastmri import PhantomSpec, Volume3D, default_centers, generate_dataset


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(20240811))


@pytest.fixture
def random_volume(rng):
    data = rng.normal(0.5, 0.2, size=(3, 10, 12, 14)).astype(np.float32)
    return Volume3D(data, spacing=(2.0, 1.5, 1.0), origin=(0.0, -3.0, 5.0))


@pytest.fixture(scope="session")
def small_dataset():
    """Two centers, a handful of cases; reused by protocol-level tests."""
    spec = PhantomSpec(centers=default_centers(2), cases_per_center=9, master_seed=99)
    return generate_dataset(spec)
