import numpy as np
import pytest
from hypothesis import settings

from ofu_lqr import CostPair, DynamicsParameter, NoiseModel, solve_dare
from ofu_lqr.exceptions import NotStabilizableError

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")

# scalar reference system: K solves K^2 - 0.81 K - 1 = 0
K_SCALAR = (0.81 + np.sqrt(0.81**2 + 4.0)) / 2.0
L_SCALAR = -0.9 * K_SCALAR / (K_SCALAR + 1.0)


@pytest.fixture
def scalar_theta():
    return DynamicsParameter([[0.9]], [[1.0]])


@pytest.fixture
def unit_cost():
    return CostPair([[1.0]], [[1.0]])


@pytest.fixture
def scalar_noise():
    return NoiseModel.gaussian([[1.0]])


def random_stabilizable(rng, p, r):
    """Stable closed loop ``D`` and gain ``L`` first, then ``A = D - B L``."""
    M = rng.standard_normal((p, p))
    D = M * rng.uniform(0.1, 0.95) / max(np.max(np.abs(np.linalg.eigvals(M))), 1e-9)
    B = rng.standard_normal((p, r))
    L = rng.standard_normal((r, p))
    return DynamicsParameter(D - B @ L, B)


def random_spd(rng, n, floor=0.1):
    M = rng.standard_normal((n, n))
    return M @ M.T + floor * np.eye(n)


def matched_pair(rng, p, r):
    """Pair ``(theta0, theta1)`` whose closed loops under ``L(theta0)`` agree and
    whose optimal costs are equal.

    The last rows of ``A0`` and ``B0`` vanish, so ``e_p' D0 = 0`` for every
    gain.  Moving ``B`` along ``K0^{-1} e_p`` (and ``A`` by ``-dB L0``) keeps
    ``theta [I; L0]`` fixed and leaves the first-order condition
    ``R L0 + B' K0 D0 = 0`` intact.
    """
    while True:
        A = rng.standard_normal((p, p)) * 0.6
        B = rng.standard_normal((p, r))
        A[-1] = 0.0
        B[-1] = 0.0
        theta0 = DynamicsParameter(A, B)
        cost = CostPair(random_spd(rng, p), random_spd(rng, r))
        try:
            sol = solve_dare(theta0, cost)
        except NotStabilizableError:
            continue
        if np.linalg.norm(sol.K, 2) > 1e3:  # nearly uncontrollable; iteration is too slow
            continue
        v = np.linalg.solve(sol.K, np.eye(p)[:, -1])
        dB = np.outer(v, rng.standard_normal(r))
        dB *= rng.uniform(0.1, 1.0) / np.linalg.norm(dB, 2)
        theta1 = DynamicsParameter(A - dB @ sol.L, B + dB)
        return theta0, theta1, cost


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
