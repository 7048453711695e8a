import re

_CRITERIA = {
    1: "kernel trace identity",
    2: "closed form vs quadrature oracle",
    3: "gradient fidelity",
    4: "MM monotonicity",
    5: "GPR-MMSE equivalence",
    6: "baseline exactness",
    7: "grid identification",
    8: "desk-scale NMSE ordering",
    9: "bench determinism across --jobs",
    10: "Doppler helper constants",
}
_outcomes: dict[int, str] = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_c(\d+)_", report.nodeid)
    if not m:
        return
    n = int(m.group(1))
    if report.failed:
        _outcomes[n] = "FAIL"
    elif report.when == "call" and report.passed:
        _outcomes.setdefault(n, "PASS")
    elif report.skipped:
        _outcomes.setdefault(n, "SKIP")


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_outcomes):
        terminalreporter.write_line(f"[{_outcomes[n]}] criterion {n:2d}: {_CRITERIA.get(n, '?')}")
