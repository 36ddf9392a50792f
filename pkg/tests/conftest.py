import numpy as np
import pytest

from ahlab.metric import ball_model, perturbed_model


@pytest.fixture(scope="session")
def ball2():
    return ball_model(2)


@pytest.fixture(scope="session")
def ball1():
    return ball_model(1)


@pytest.fixture(scope="session")
def pert2():
    return perturbed_model(2)


@pytest.fixture(scope="session")
def pert1():
    return perturbed_model(1)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_ball_points(rng, count, d, rho_max=0.9):
    u = rng.normal(size=(count, d))
    u /= np.linalg.norm(u, axis=1)[:, None]
    return u * rho_max * rng.uniform(size=(count, 1)) ** (1.0 / d)


ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for cid in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[cid])
