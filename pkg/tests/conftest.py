"""Shared pytest hooks.

The acceptance tests register one result line each; the summary hook prints
them as a block at the end of the run so every criterion shows an explicit
pass/fail line regardless of output capturing.
"""

ACCEPTANCE_RESULTS: list[str] = []


def record_acceptance(number: int, title: str, passed: bool, detail: str) -> None:
    status = "PASS" if passed else "FAIL"
    ACCEPTANCE_RESULTS.append(f"[{number:2d}] {title}: {status} ({detail})")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(line)
