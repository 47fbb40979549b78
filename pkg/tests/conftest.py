from __future__ import annotations

from pathlib import Path

import pytest

from mdae.corpus import corpus_dir
from mdae.model import load_model

# filled by tests/test_acceptance.py, printed at the end of the session
CRITERIA: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def corpus() -> Path:
    return corpus_dir()


@pytest.fixture(scope="session")
def load(corpus):
    def _load(name: str):
        return load_model(corpus / name / "model.mdae")
    return _load


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        ok, title = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}: {title}")
