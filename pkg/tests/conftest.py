import numpy as np
import pytest

from voxpano.geometry import GridSpec, LabelTaxonomy, default_taxonomy

ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(line)


@pytest.fixture
def criterion():
    """Record a one-line PASS/FAIL verdict, then assert it."""
    def record(number, title, ok, detail=""):
        verdict = "PASS" if ok else "FAIL"
        ACCEPTANCE_RESULTS.append(f"[{verdict}] AC{number} {title}: {detail}")
        assert ok, f"AC{number} {title}: {detail}"
    return record


@pytest.fixture
def tax():
    return default_taxonomy()


@pytest.fixture
def small_tax():
    # free, 4 things, 2 stuff
    return LabelTaxonomy(
        ("free", "car", "truck", "pedestrian", "cone", "road", "building"),
        ("free", "thing", "thing", "thing", "thing", "stuff", "stuff"),
    )


@pytest.fixture
def small_spec():
    return GridSpec(16, 16, 4, 0.4, 0.4, 0.4)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
