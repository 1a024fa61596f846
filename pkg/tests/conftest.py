from __future__ import annotations

import re
from pathlib import Path

import pytest
import torch
from hypothesis import settings

from algebra_errors.data import ErrorClass, Outcome, Step, StepRecord
from algebra_errors.models import ClassifierConfig, build_classifier, resolve_model
from algebra_errors.synthetic import synthetic_records

FIXTURES = Path(__file__).parent / "fixtures"
TINY_BERT = FIXTURES / "tiny-bert"
TINY_GPT2 = FIXTURES / "tiny-gpt2"
FAMILY_SOURCES = {"encoder": str(TINY_BERT), "decoder": str(TINY_GPT2), "gru": "gru"}

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")


def make_record(prior: str, current: str, action: str | None = None, label: int = 0, rid: str = "r", student="s"):
    prior_step = Step(prior, student_id=student, response_id=rid)
    current_step = Step(current, action, outcome=Outcome.BUG, student_id=student, response_id=rid, prior=prior_step)
    return StepRecord(prior_step, current_step, ErrorClass(label, f"C{label}"), student, rid, rid)


def make_classifier(kind: str, m: int, seed: int = 0, **kwargs):
    family = resolve_model(FAMILY_SOURCES[kind])
    return build_classifier(ClassifierConfig(family, num_classes=m, seed=seed, **kwargs))


@pytest.fixture(scope="session")
def labeled():
    """Synthetic labeled records: 113 records over 6 classes."""
    return synthetic_records(20, 10, seed=1)


@pytest.fixture(scope="session")
def fixture50(labeled):
    return labeled.records[:50], len(labeled.scheme.classes)


@pytest.fixture(autouse=True)
def _restore_determinism_flag():
    yield
    torch.use_deterministic_algorithms(False)


# ---------------------------------------------------------------------------
# one line per acceptance criterion at the end of the run

_CRITERION = re.compile(r"test_criterion_(\d+)_([\w\[\]-]+)")
_outcomes: dict[str, list[tuple[str, str]]] = {}


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if not m:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        detail = ""
        if report.outcome == "skipped" and isinstance(report.longrepr, tuple):
            detail = report.longrepr[2].removeprefix("Skipped: ")
        _outcomes.setdefault(m.group(1), []).append((m.group(2), f"{status}{' (' + detail + ')' if detail else ''}"))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_outcomes, key=int):
        for name, status in _outcomes[number]:
            terminalreporter.write_line(f"criterion {number} [{name}]: {status}")
