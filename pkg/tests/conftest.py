import numpy as np
import pytest

from irs_noma.channel import FadingParams, sample_channels, sample_geometry, with_normalized_error


def make_channels(seed, dims, xi_n=0.01):
    rng = np.random.default_rng(seed)
    cs = sample_channels(sample_geometry(rng), FadingParams(), dims, rng)
    return with_normalized_error(cs, xi_n)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_cs():
    """N_t=4, M=3, N_e=2 instance with a 5% normalized CSI error."""
    return make_channels(7, (4, 3, 2), xi_n=0.05)


def random_hermitian(rng, n, psd=False):
    A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return A @ A.conj().T if psd else 0.5 * (A + A.conj().T)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
