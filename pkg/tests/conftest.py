from __future__ import annotations

from pathlib import Path

import pytest

from culrag.core import Locale, Option, Question, Track

FIXTURES = Path(__file__).parent / "fixtures"
E2E = FIXTURES / "e2e"


def saq(qid: str, text: str, *refs: str) -> Question:
    from culrag.core import parse_locale

    return Question(qid, parse_locale(qid), text, Track.SAQ, (), tuple(refs))


def mcq(qid: str, text: str, options: dict[str, str], gold: str | None = None) -> Question:
    from culrag.core import parse_locale

    opts = tuple(Option(k, v) for k, v in options.items())
    return Question(qid, parse_locale(qid), text, Track.MCQ, opts, (), gold)


@pytest.fixture
def en_gb() -> Locale:
    return Locale("en", "GB")


@pytest.fixture
def e2e_dir() -> Path:
    return E2E


# --- acceptance summary: one line per criterion -------------------------------------

_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if call.when == "setup" and call.excinfo is not None:
        outcome = "SKIP" if call.excinfo.errisinstance(pytest.skip.Exception) else "FAIL"
        _CRITERIA[number] = (outcome, title)
    elif call.when == "call":
        if call.excinfo is None:
            outcome = "PASS"
        elif call.excinfo.errisinstance(pytest.skip.Exception):
            outcome = "SKIP"
        else:
            outcome = "FAIL"
        _CRITERIA[number] = (outcome, title)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        outcome, title = _CRITERIA[number]
        terminalreporter.write_line(f"[{outcome}] criterion {number}: {title}")
