import pytest

_RESULTS: dict[int, list[tuple[str, bool, str]]] = {}


class AcceptanceLog:
    def record(self, criterion: int, part: str, passed: bool, detail: str) -> bool:
        _RESULTS.setdefault(criterion, []).append((part, bool(passed), detail))
        return bool(passed)


@pytest.fixture(scope="session")
def acceptance():
    return AcceptanceLog()


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for c in sorted(_RESULTS):
        parts = _RESULTS[c]
        verdict = "PASS" if all(ok for _, ok, _ in parts) else "FAIL"
        detail = "; ".join(f"{name}: {'ok' if ok else 'FAILED'} ({d})" for name, ok, d in parts)
        tr.write_line(f"criterion {c:2d}: {verdict}  {detail}")
