"""Shared pytest wiring: the acceptance tests register one verdict per
criterion here, and a terminal-summary hook prints them as a block at the end
of the run (also archived under artifacts/)."""

import re
from pathlib import Path

AC_RESULTS: dict = {}


def register_ac(name: str, ok: bool, detail: str) -> None:
    AC_RESULTS[name] = (bool(ok), detail)


def _numeric_key(item):
    m = re.search(r"\d+", item[0])
    return int(m.group()) if m else 0


def pytest_terminal_summary(terminalreporter):
    if not AC_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    lines = []
    for name, (ok, detail) in sorted(AC_RESULTS.items(), key=_numeric_key):
        line = f"{name} {'PASS' if ok else 'FAIL'}: {detail}"
        terminalreporter.write_line(line)
        lines.append(line)
    artifacts = Path(__file__).resolve().parent.parent / "artifacts"
    artifacts.mkdir(exist_ok=True)
    (artifacts / "acceptance_report.txt").write_text("\n".join(lines) + "\n")
