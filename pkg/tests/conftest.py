from __future__ import annotations

# criterion id -> (status, detail); filled by test_acceptance.py
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid, (status, detail) in ACCEPTANCE.items():
        terminalreporter.write_line(f"{status:<5} {cid:<14} {detail}")
