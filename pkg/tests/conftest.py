import pathlib

import pytest

ROOT = pathlib.Path(__file__).resolve().parent.parent

# acceptance-criterion verdicts, echoed after the run (capture hides prints)
VERDICTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
FIXTURES = ROOT / "fixtures"
DATA = pathlib.Path(__file__).resolve().parent / "data"


@pytest.fixture(scope="session")
def corpus_path():
    return FIXTURES / "corpus.txt"


@pytest.fixture(scope="session")
def labeled_path():
    return FIXTURES / "labeled.csv"


@pytest.fixture(scope="session")
def preprocess_cases_path():
    return DATA / "preprocess_cases.json"
