import pytest

CRITERIA = {
    1: "reward-table oracle",
    2: "gradient correctness",
    3: "factorized SAC exactness",
    4: "case 1 learning",
    5: "transfer advantage",
    6: "twin-link latency budget",
    7: "twin fidelity",
    8: "protocol robustness",
    9: "kinematic span",
    10: "determinism",
}

_results = {}


@pytest.fixture
def criterion():
    """Call ``criterion(n, ok, detail)`` to record an acceptance verdict."""

    def record(n, ok, detail=""):
        _results[n] = (bool(ok), detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        if n in _results:
            ok, detail = _results[n]
            verdict = "PASS" if ok else "FAIL"
        else:
            verdict, detail = "NOT RUN", ""
        line = f"criterion {n:>2} {CRITERIA[n]:<26} {verdict}"
        terminalreporter.write_line(f"{line}  {detail}" if detail else line)
