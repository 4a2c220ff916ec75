import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gca.graph import Graph, SbmSpec, generate_sbm

settings.register_profile("gca", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("gca")


def random_spd(rng, d, scale=1.0, cond=10.0):
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    eig = scale * np.exp(rng.uniform(0.0, np.log(cond), size=d))
    return (q * eig) @ q.T


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def two_triangles():
    return Graph.from_edges(6, [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)])


@pytest.fixture(scope="session")
def sbm_small():
    return generate_sbm(SbmSpec(n_communities=2, community_size_range=(15, 15), seed=3))


# one line per acceptance criterion, echoed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
