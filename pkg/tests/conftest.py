import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def gaussian_density(grid, sigma_q2, T=1.0, m=1.0, omega=0.0, center=None):
    """Analytic harmonic-trap density sampled at cell centers (normalized)."""
    from statequil.statefield import GridDensity

    q = grid.q_mesh()
    p = grid.p_mesh()
    d = grid.dim
    c = np.zeros(d) if center is None else np.asarray(center, dtype=float)
    r2 = sum((qk - ck) ** 2 for qk, ck in zip(q, c))
    rho = np.exp(-r2 / (2 * sigma_q2))
    if d == 2:
        u = [-omega * q[1], omega * q[0]]
    else:
        u = [-omega * q[1], omega * q[0], np.zeros_like(q[2])]
    ex = 0.0
    for k in range(d):
        pk = p[k].reshape((1,) * d + p[k].shape)
        uk = np.broadcast_to(m * u[k], grid.q_n).reshape(grid.q_n + (1,) * d)
        ex = ex + (pk - uk) ** 2
    f = rho.reshape(grid.q_n + (1,) * d) * np.exp(-ex / (2 * m * T))
    return GridDensity(grid, f).normalize()


ACCEPTANCE: dict = {}


@pytest.fixture
def acceptance():
    """Record ``(criterion, passed, detail)``; lines are printed in the terminal summary."""

    def record(number, name, passed, detail):
        ACCEPTANCE[number] = (name, bool(passed), detail)
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        name, passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {number}. {name}: {detail}")
