import pytest

_verdicts: dict[int, tuple[bool, str, str]] = {}


@pytest.fixture
def verdict():
    """Record one acceptance criterion's outcome; returns ``ok`` for asserting."""

    def record(number: int, title: str, ok: bool, detail: str = "") -> bool:
        _verdicts[number] = (bool(ok), title, detail)
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'} {title} {detail}")
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_verdicts):
        ok, title, detail = _verdicts[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {title}  [{detail}]")
