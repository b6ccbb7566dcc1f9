import pytest

from stviz.network import calibrate, noise_inputs, toy_two_stream

_ACCEPTANCE = []


@pytest.fixture(scope="session")
def toy():
    return toy_two_stream(seed=1)


@pytest.fixture(scope="session")
def toy_table(toy):
    return calibrate(toy, noise_inputs(toy, 50, seed=7))


@pytest.fixture
def acceptance_log():
    def record(criterion, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
