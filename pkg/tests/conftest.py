import numpy as np
import pytest
from hypothesis import settings

from dfsmem.qstate import Register, embed_qubit_density

settings.register_profile("dfsmem", max_examples=25, deadline=None)
settings.load_profile("dfsmem")


def random_density(n_qubits, rng, rank=None):
    """Random mixed qubit density matrix (Ginibre ensemble), ``2**n`` dimensional."""
    d = 2 ** n_qubits
    rank = rank or d
    g = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
    rho = g @ g.conj().T
    return rho / np.trace(rho)


def random_register(n_qubits, rng, roles=None):
    return Register.from_density(embed_qubit_density(random_density(n_qubits, rng)), roles)


def random_unitary(d, rng):
    z = (rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def assert_physical(reg, atol=1e-12):
    assert abs(np.trace(reg.rho) - 1) <= atol
    assert np.max(np.abs(reg.rho - reg.rho.conj().T)) <= atol
    assert np.linalg.eigvalsh(reg.rho)[0] >= -1e-10


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# Acceptance verdicts collected by tests/test_acceptance.py, echoed in the summary.
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
