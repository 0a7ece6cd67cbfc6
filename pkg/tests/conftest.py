import pytest

from qnlchain import PotentialSpec, build_limit_table, compute_constants

# filled by test_acceptance, printed at the end of the run
ACCEPTANCE_LINES: dict = {}


@pytest.fixture(scope="session")
def lj():
    spec = PotentialSpec.lennard_jones(1.0, 1.0)
    return spec, compute_constants(spec)


@pytest.fixture(scope="session")
def morse():
    spec = PotentialSpec.morse(1.0, 1.0, 1.0)
    return spec, compute_constants(spec)


@pytest.fixture(scope="session")
def lj_table(lj):
    spec, a = lj
    return build_limit_table(spec, a, thetas=(a.delta1, a.gamma, 1.0, 1.3), m_values=(0, 1, 2, 5))


@pytest.fixture(scope="session")
def morse_table(morse):
    spec, a = morse
    return build_limit_table(spec, a, thetas=(a.delta1, a.gamma, 0.9), m_values=(0, 1, 2, 5))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES, key=lambda k: int(k)):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
