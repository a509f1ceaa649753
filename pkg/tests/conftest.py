"""Shared pytest hooks: acceptance criteria report one PASS/FAIL line each."""
from __future__ import annotations

ACCEPTANCE_LINES: list[str] = []


def record(name: str, ok: bool, detail: str = "") -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {name}" + (f" -- {detail}" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: trains models; minutes of CPU time")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
