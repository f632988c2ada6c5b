import contextlib

import pytest

from eeprobe.hwif import SimBackend, SimParameters

_CRITERIA: dict[int, tuple[str, bool, str]] = {}


@contextlib.contextmanager
def criterion(number: int, title: str):
    """Record a pass/fail line for an acceptance criterion; re-raises failures."""
    try:
        yield
    except BaseException as exc:
        _CRITERIA[number] = (title, False, f"{type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}")
        print(f"criterion {number:2d} FAIL  {title}")
        raise
    _CRITERIA[number] = (title, True, "")
    print(f"criterion {number:2d} PASS  {title}")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, ok, why = _CRITERIA[n]
        line = f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}"
        terminalreporter.write_line(line + (f"  ({why})" if why else ""))


@pytest.fixture
def sim():
    with SimBackend(seed=0) as hw:
        yield hw


@pytest.fixture
def make_sim():
    def factory(seed=0, **overrides):
        return SimBackend(params=SimParameters(**overrides), seed=seed)
    return factory
