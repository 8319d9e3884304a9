import time

import pytest

from freqprint import cli

RESULTS = {}


def record(number, passed, detail):
    RESULTS[number] = (passed, detail)
    print(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def desk_pool(tmp_path_factory):
    """The 17 freq + 3 grid desk pool trained through the CLI; (dir, seconds)."""
    out = tmp_path_factory.mktemp("desk") / "pool"
    t0 = time.perf_counter()
    code = cli.main(["pool", "train", "--n-freq", "17", "--n-grid", "3", "--out", str(out)])
    assert code == 0
    return out, time.perf_counter() - t0


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(RESULTS):
        passed, detail = RESULTS[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
