import numpy as np
import pytest

from mhelab import kernels


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=sorted(kernels.BACKENDS))
def kernel_backend(request):
    """Run a test once per available attention backend."""
    previous = kernels.backend()
    kernels.use_backend(request.param)
    yield request.param
    kernels.use_backend(previous)


@pytest.fixture
def criterion(request):
    """Record one acceptance line; the test calls ``criterion(num, ok, detail)`` exactly once."""
    store = request.config.__dict__.setdefault("_mhelab_acceptance", {})

    def record(num: int, ok: bool, detail: str) -> None:
        line = f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        store[num] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.__dict__.get("_mhelab_acceptance")
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(store):
        terminalreporter.write_line(store[num])
