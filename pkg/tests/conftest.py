"""Shared helpers. The acceptance suite records one verdict per criterion
here so the terminal summary can list them together."""

VERDICTS: dict[int, str] = {}


def record(criterion: int, title: str, ok: bool, detail: str = "") -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {title}"
    if detail:
        line += f" ({detail})"
    VERDICTS[criterion] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(VERDICTS):
        terminalreporter.write_line(VERDICTS[k])
