import numpy as np
import pytest

from sfcpart import kernels
from sfcpart.core import generate, normalize


@pytest.fixture(params=sorted(kernels.backends()))
def backend(request):
    """Each available kernel implementation as a module-like object."""
    return kernels.backends()[request.param]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def unit2d():
    return normalize(generate("uniform", 2000, 2, seed=7))


def grid_dataset(k: int, d: int):
    """Cell centers of a 2^k-per-side grid in the unit cube, ids in row-major order."""
    from sfcpart.core import Dataset

    side = 2 ** k
    axes = np.meshgrid(*[np.arange(side)] * d, indexing="ij")
    cells = np.stack([a.ravel() for a in axes], axis=1)
    coords = (cells + 0.5) / side
    n = cells.shape[0]
    return Dataset(np.arange(n), np.ones(n), coords), cells


ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance criterion; the test body fills in ``detail``."""
    import time

    num = request.node.get_closest_marker("criterion").args[0]
    record = {"detail": ""}
    t0 = time.perf_counter()
    yield record
    elapsed = time.perf_counter() - t0
    rep = getattr(request.node, "rep_call", None)
    ok = rep is not None and rep.passed
    ACCEPTANCE[num] = (ok, f"{record['detail']} ({elapsed:.1f}s)".strip())


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
