import numpy as np
import pytest

from osibench import _pykernels
from osibench.store import EmbeddingStore
from osibench.synth import SynthConfig, generate

try:
    from osibench import _kernels
except ImportError:  # extension not built
    _kernels = None

BACKENDS = [pytest.param(_pykernels, id="numpy")]
if _kernels is not None:
    BACKENDS.append(pytest.param(_kernels, id="cython"))


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


@pytest.fixture(scope="session")
def small_store():
    return generate(SynthConfig(n_speakers=40, recordings_per_speaker=3, dim=16, within_spread=0.2, seed=3))


@pytest.fixture(scope="session")
def cohort_store():
    return generate(SynthConfig(n_speakers=25, recordings_per_speaker=2, dim=16, within_spread=0.2, seed=99, prefix="coh"))


def make_store(counts, dim=2, seed=0):
    """Build a store from {speaker: n_recordings} with random vectors."""
    rng = np.random.default_rng(seed)
    spk, rec = [], []
    for s, n in counts.items():
        for j in range(n):
            spk.append(s)
            rec.append(f"{s}-{j}")
    return EmbeddingStore(spk, rec, rng.standard_normal((len(rec), dim)))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
