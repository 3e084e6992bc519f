"""Shared pytest hooks: the acceptance suite reports one line per criterion."""
from collections import OrderedDict

# criterion number -> list of (part, passed, detail)
CRITERIA = OrderedDict()


def record(number, part, passed, detail):
    CRITERIA.setdefault(number, []).append((part, bool(passed), detail))
    print(f"criterion {number} [{part}]: {'PASS' if passed else 'FAIL'} {detail}")


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        parts = CRITERIA[number]
        ok = all(p[1] for p in parts)
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}")
        for part, passed, detail in parts:
            terminalreporter.write_line(f"    {part}: {'pass' if passed else 'fail'}  {detail}")
