import re

_CRITERION = re.compile(r"test_criterion_(\d+)")
_results: dict[int, list] = {}


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if not m or "test_acceptance" not in report.nodeid:
        return
    if report.when == "call" or report.failed:
        n = int(m.group(1))
        details = "; ".join(f"{k}={v}" for k, v in report.user_properties)
        _results.setdefault(n, []).append((report.passed, details))


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_results):
        ok = all(p for p, _ in _results[n])
        details = " | ".join(d for _, d in _results[n] if d)
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {details}")
