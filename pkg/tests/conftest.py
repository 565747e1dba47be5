import pytest

from ehrchain import crypto
from ehrchain.protocol import System

FAST_KDF = 1000


def fp(name: str) -> crypto.Fingerprint:
    return crypto.Fingerprint.from_text(f"fingerprint-secret-of-{name}")


@pytest.fixture
def system():
    """Three founding hospitals, two patients, strict batching."""
    s = System(seed=11, kdf_iterations=FAST_KDF)
    s.bootstrap([("H1", "pw1"), ("H2", "pw2"), ("H3", "pw3")])
    s.patient_signup(fp("alice"), "alice")
    s.patient_signup(fp("bob"), "bob")
    return s


@pytest.fixture
def keys():
    return [crypto.generate_keypair() for _ in range(4)]


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
