import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

CRITERIA: dict[int, tuple[str, str]] = {}
REPORT: list[str] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        CRITERIA[n] = (title, "PASS" if rep.passed else "FAIL")


def pytest_terminal_summary(terminalreporter):
    if REPORT:
        terminalreporter.section("benchmark report")
        for line in REPORT:
            terminalreporter.write_line(line)
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        title, status = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {title}")


@pytest.fixture
def report():
    """Lines appended here are printed in the terminal summary."""
    return REPORT


@pytest.fixture(scope="session")
def mosaic_training_set():
    """Labelled features of three generated mosaics."""
    from salientseg.imagecore import GrayImage
    from salientseg.surf import extract
    from salientseg.synth import random_spec, render
    from salientseg.texmodel import TrainingSet, label_features

    sets = []
    for seed in (21, 22, 23):
        img, lab = render(random_spec(seed))
        sets.append(label_features(extract(GrayImage(img)), lab))
    return TrainingSet.merge(sets)
