"""Collects one pass/fail line per acceptance criterion for the terminal summary."""
import pytest

_DETAILS = {}
_OUTCOMES = {}


@pytest.fixture
def criterion(request):
    """Record a one-line measurement for the running acceptance test."""
    def record(number, title, detail):
        _DETAILS[request.node.nodeid] = (number, title, detail)
        print(f"criterion {number}: {title}: {detail}")
    return record


def pytest_runtest_logreport(report):
    if "test_acceptance" in report.nodeid and (report.when == "call" or report.failed):
        if report.nodeid not in _OUTCOMES or report.failed:
            _OUTCOMES[report.nodeid] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    rows = []
    for nodeid, outcome in _OUTCOMES.items():
        number, title, detail = _DETAILS.get(nodeid, (None, nodeid.split("::")[-1], "no measurement"))
        if number is None:
            digits = "".join(ch for ch in nodeid.split("criterion_")[-1][:2] if ch.isdigit())
            number = int(digits) if digits else 0
        status = "PASS" if outcome == "passed" else "FAIL"
        rows.append((number, f"[{status}] criterion {number:2d} {title}: {detail}"))
    for _, line in sorted(rows):
        terminalreporter.write_line(line)
