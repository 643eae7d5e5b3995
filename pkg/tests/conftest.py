import numpy as np
import pytest

from pedfusion import synthgen
from pedfusion.fusion import TINY


def tiny_params(**kw):
    base = dict(n_samples=4, n_frames=TINY.n_frames, local_size=TINY.local_size, global_size=TINY.global_size, seed=3)
    base.update(kw)
    return synthgen.ScenarioParams(**base)


@pytest.fixture
def tiny_samples():
    samples, _ = synthgen.generate_in_memory(tiny_params())
    return samples


@pytest.fixture
def desk_sample():
    return synthgen.make_sample(synthgen.ScenarioParams(), 0)[0]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion; also printed live."""

    def record(n, ok, detail):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
