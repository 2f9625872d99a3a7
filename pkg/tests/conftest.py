import numpy as np
import pytest

from wavemorph import _kernels

BACKENDS = ["numpy"] + (["numba"] if _kernels.HAS_NUMBA else [])


@pytest.fixture(params=BACKENDS)
def kernel_backend(request, monkeypatch):
    """Run a test once per kernel backend by swapping the module-level binding."""
    import wavemorph.convnet
    import wavemorph.wavelet

    be = _kernels.get_backend(request.param)
    monkeypatch.setattr(wavemorph.convnet, "_kernels", be)
    monkeypatch.setattr(wavemorph.wavelet, "_kernels", be)
    return be


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
