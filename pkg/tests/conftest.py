import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_CRITERIA = []


class CriterionReport:
    def __init__(self, number, title, limit_s):
        self.number = number
        self.title = title
        self.limit_s = limit_s
        self.start = time.perf_counter()
        self.checks = []

    def check(self, ok, detail):
        self.checks.append((bool(ok), detail))
        return ok

    def finish(self):
        elapsed = time.perf_counter() - self.start
        in_time = elapsed < self.limit_s
        ok = all(c for c, _ in self.checks) and in_time
        detail = "; ".join(d for _, d in self.checks)
        line = (f"{'PASS' if ok else 'FAIL'} criterion {self.number:>2} {self.title}: {detail} "
                f"[{elapsed:.2f}s, limit {self.limit_s:g}s]")
        _CRITERIA.append((self.number, line))
        print(line)
        failed = [d for c, d in self.checks if not c]
        assert in_time, f"runtime {elapsed:.1f}s exceeds {self.limit_s}s"
        assert not failed, "; ".join(failed)


@pytest.fixture
def criterion():
    reports = []

    def make(number, title, limit_s):
        rep = CriterionReport(number, title, limit_s)
        reports.append(rep)
        return rep

    return make


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_CRITERIA):
        terminalreporter.write_line(line)
