import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fcla.metrics import BeamSolution
from fcla.scenario import ArrayConfig, PathSet, Placement, Scenario

settings.register_profile(
    "fcla", deadline=None, max_examples=int(os.environ.get("FCLA_HYPOTHESIS_EXAMPLES", "40")),
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("fcla")


def random_paths(rng, L=4, scale=1.0):
    theta = rng.uniform(np.pi / 6, 5 * np.pi / 6, L)
    phi = rng.uniform(0, 2 * np.pi, L)
    beta = scale * (rng.standard_normal(L) + 1j * rng.standard_normal(L)) / np.sqrt(2 * L)
    return PathSet(theta, phi, beta)


def random_scenario(rng, M=2, N=2, K=2, L=3, P=1.0, gamma_th_e=0.5, sigma2=0.1, A=None):
    cfg = ArrayConfig(M, N, 0.1, A=A)
    return Scenario(cfg, tuple(random_paths(rng, L) for _ in range(K)), random_paths(rng, L),
                    np.full(K, sigma2), sigma2, P, gamma_th_e)


def random_beams(rng, Nt, K, P=1.0, an=True):
    W = rng.standard_normal((Nt, K)) + 1j * rng.standard_normal((Nt, K))
    if an:
        B = rng.standard_normal((Nt, Nt)) + 1j * rng.standard_normal((Nt, Nt))
        R = B @ B.conj().T
    else:
        R = np.zeros((Nt, Nt), complex)
    total = np.sum(np.abs(W) ** 2) + np.trace(R).real
    f = 0.9 * P / total
    return BeamSolution(W * np.sqrt(f), R * f)


def random_placement(rng, config):
    """Uniform rings with random rotations and random feasible heights."""
    M, N = config.M, config.N
    phi = rng.uniform(0, 2 * np.pi / N, (M, 1)) + 2 * np.pi * np.arange(N)[None, :] / N
    slack = config.A - (M - 1) * config.z_th
    z = np.sort(rng.uniform(0, slack, M)) + config.z_th * np.arange(M)
    return Placement(phi, z)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, echoed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
