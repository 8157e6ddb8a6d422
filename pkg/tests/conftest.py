VERDICTS: dict[int, str] = {}


def record(number: int, title: str, ok: bool, detail: str = "") -> bool:
    """Store a one-line verdict for the acceptance summary and echo it."""
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}"
    if detail:
        line += f"  [{detail}]"
    VERDICTS[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[n])
