import numpy as np
import pytest
from hypothesis import settings

from rgfwave import forward
from rgfwave.inversion import Frame
from rgfwave.scenario import builtin_scenarios, scenario_from_dict

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def scenarios():
    return builtin_scenarios()


@pytest.fixture(scope="session")
def point3_field(scenarios):
    return forward.march_boundary_field(scenarios["point3"])


@pytest.fixture(scope="session")
def dipole3_field(scenarios):
    return forward.march_boundary_field(scenarios["dipole3"])


def small_scenario(sources, T=12.0, dt=0.1, J=6, K=12, **recon):
    d = {"T": T, "dt": dt, "grid": {"R": 2.0, "J": J, "K": K}, "sources": sources}
    if recon:
        d["recon"] = recon
    return scenario_from_dict(d)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_frame(tau, positions, flags=None, strength=None):
    P = np.asarray(positions, float).reshape(-1, 3)
    K = len(P)
    fr = Frame(tau, K, np.zeros(5))
    fr.pxy = P[:, 0] + 1j * P[:, 1]
    fr.pz = P[:, 2].copy()
    fr.dz, fr.xi, fr.t_emit = np.zeros(K), np.ones(K), tau - P[:, 2]
    fr.strength = np.ones(K, complex) if strength is None else np.asarray(strength, complex)
    fr.flags = [list(f) for f in flags] if flags else [[] for _ in range(K)]
    return fr
