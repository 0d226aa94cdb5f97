import pytest

from flowctx.flows import FlowRecord, Label


def flow(ts, src="A", dst="B", nbytes=100, dur=1, proto="TCP", label=Label.BENIGN):
    return FlowRecord(ts, dur, proto, src, dst, nbytes, label)


@pytest.fixture
def make_flow():
    return flow


TABLE1_COUNTS = {37: 1, 39: 4, 80: 24771, 81: 3158, 37548: 4}


@pytest.fixture
def table1_values():
    return [v for v, c in TABLE1_COUNTS.items() for _ in range(c)]


ACCEPTANCE_RESULTS: list[tuple[int, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, text in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {text}")
