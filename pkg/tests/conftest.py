"""Suite-wide pytest wiring.

The acceptance tests register one result per criterion here; the run then
ends with a visible PASS/FAIL line for each, independent of output capture.
"""

ACCEPTANCE_RESULTS: dict[int, tuple[str, bool, str]] = {}


def record_criterion(num: int, title: str, ok: bool, detail: str) -> None:
    ACCEPTANCE_RESULTS[num] = (title, ok, detail)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE_RESULTS):
        title, ok, detail = ACCEPTANCE_RESULTS[num]
        status = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"criterion {num} {status} - {title}: {detail}")
