import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from bimatch.indices import two_type_fixture
from bimatch.network import (
    EconParams,
    HexLayout,
    build_services,
    default_data_files,
    generate_uniform_network,
    load_real_network,
)

UNIFORM_ECON = dict(b=1.0, gamma=1.7, Q=40.0, upsilon=0.03, beta=0.09, N=5)
MELBOURNE_ECON = dict(b=1.0, gamma=1.7, Q=40.0, upsilon=0.0054, beta=0.0189, N=5)


def uniform_econ(zeta=7.0):
    return EconParams(zeta=zeta, **UNIFORM_ECON)


def melbourne_econ(zeta=7.0):
    return EconParams(zeta=zeta, **MELBOURNE_ECON)


@pytest.fixture(scope="session")
def fixture_catalog():
    return two_type_fixture()


@pytest.fixture(scope="session")
def pair_service(fixture_catalog):
    return fixture_catalog.service(3)


@pytest.fixture(scope="session")
def uniform_spec():
    return generate_uniform_network(HexLayout(), uniform_econ(), 0.3)


@pytest.fixture(scope="session")
def uniform_catalog(uniform_spec):
    return build_services(uniform_spec, uniform_econ())


@pytest.fixture(scope="session")
def melbourne_spec():
    return load_real_network(**default_data_files(), econ=melbourne_econ())


@pytest.fixture(scope="session")
def melbourne_catalog(melbourne_spec):
    return build_services(melbourne_spec, melbourne_econ())


def single_service_system(R=10.0, rbar=1.0, C=0.0, mu=1.0, N=3):
    """One two-type service (id 1) that takes every arrival its capacity allows.

    Arrivals meeting a full own queue go to zero-reward self-shared sinks
    (ids 2, 3) whose customers leave almost at once, which stands in for
    blocking. Returns the catalog and a BI table that always prefers service 1.
    """
    import numpy as np

    from bimatch.indices import IndexTable
    from bimatch.network import RsService, ServiceCatalog

    pair = RsService(1, (1, 2), False, 1.0, R, (rbar, rbar), (mu, mu), (C, C))
    sink = lambda j, t: RsService(j, (t, t), True, 1.0, 0.0, (0.0, 0.0), (1e6, 1e6), (0.0, 0.0))
    cat = ServiceCatalog([pair, sink(2, 1), sink(3, 2)], {1: [1, 2], 2: [1, 3]})
    row = np.ones(2 * N + 1)
    entries = {(1, 1): row, (2, 1): row, (1, 2): 0 * row, (2, 3): 0 * row}
    return cat, IndexTable(N, entries, 1.0, 0.0, "fixed", cat.hash(), "")
