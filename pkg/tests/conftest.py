import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from screenode.experiment import PerturbationMap, PerturbStatus

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

STATUSES = [PerturbStatus.KNOCKOUT, PerturbStatus.INTERFERE, PerturbStatus.ACTIVATE]

statuses = st.sampled_from(STATUSES)
genes = st.integers(0, 11)
pmaps = st.dictionaries(genes, statuses, max_size=6).map(PerturbationMap.from_dict)


@pytest.fixture(scope="session")
def replica():
    """The seed-0 time-course replica, built once per test session."""
    from screenode.replica import build_replica

    return build_replica(0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
