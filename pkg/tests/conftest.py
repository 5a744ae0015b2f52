from pathlib import Path

import pytest

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
TOY = (CONFIGS / "toy.cfg").read_text()
DESK = (CONFIGS / "desk.cfg").read_text()

# filled by the acceptance suite, printed after the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)


@pytest.fixture
def toy_config(tmp_path):
    path = tmp_path / "toy.cfg"
    path.write_text(TOY)
    return path
