import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mrvr.kernels import KernelConfig, build_design_matrix

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_problem(rng, N=12, V=2, M=3, width=1.6):
    """Design matrix, targets, a finite-alpha active set and a random SPD Omega."""
    X = rng.uniform(-5, 5, size=(N, 1))
    Phi = build_design_matrix(X, KernelConfig(width))
    T = np.column_stack([np.sinc((X[:, 0] - 2 * j) / np.pi) for j in range(V)])
    T = T + 0.1 * rng.standard_normal((N, V))
    alpha = np.full(N + 1, np.inf)
    idx = rng.choice(N + 1, size=M, replace=False)
    alpha[idx] = np.exp(rng.uniform(-2, 2, size=M))
    Z = rng.standard_normal((V, V))
    omega = 0.02 * (Z @ Z.T + V * np.eye(V))
    return X, Phi, T, alpha, omega


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# criterion number -> (title, passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
