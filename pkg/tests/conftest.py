import sys

import numpy as np
import pytest

from ontotemporal.autodiff import Tensor
from ontotemporal.data import augment_inverse
from ontotemporal.synth import SynthSpec, generate


def T(*values, grad=False):
    """Tensor from literal values (f64)."""
    arr = np.array(values[0] if len(values) == 1 else values, dtype=np.float64)
    return Tensor(arr, requires_grad=grad)


def tiny_spec(**kw):
    base = dict(concepts=4, entities_per_concept=5, popular_fraction=0.4, timestamps=12, facts_per_step=20, seed=7)
    base.update(kw)
    return SynthSpec(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_raw():
    return generate(tiny_spec())


@pytest.fixture(scope="session")
def tiny_bundle(tiny_raw):
    return augment_inverse(tiny_raw)


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion that ran."""
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
