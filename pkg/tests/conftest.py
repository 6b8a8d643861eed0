import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_RESULTS: list[tuple[int, str, str]] = []


class Criterion:
    def __init__(self):
        self.start = time.perf_counter()
        self.label = None

    def elapsed(self) -> float:
        return time.perf_counter() - self.start

    def check(self, number: int, name: str, ok: bool, detail: str = "") -> None:
        self.label = f"C{number:<2} {name}"
        status = "PASS" if ok else "FAIL"
        _RESULTS.append((number, status, f"{self.label} [{detail}] ({self.elapsed():.2f} s)"))
        assert ok, f"{self.label}: {detail}"


@pytest.fixture
def criterion(request):
    rec = Criterion()
    yield rec
    if rec.label is None:
        _RESULTS.append((99, "FAIL", f"{request.node.name} raised before reaching its check"))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for _, status, line in sorted(_RESULTS, key=lambda r: r[0]):
        terminalreporter.write_line(f"{status}  {line}")
