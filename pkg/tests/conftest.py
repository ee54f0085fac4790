import pytest

from persanchor.data import (
    AnnotationRecord,
    Camera,
    DetectionRecord,
    Difficulty,
    ObjectClass,
)
from persanchor.geometry import BoundingBox


def gt(image_id, box, cls=ObjectClass.VEHICLE, level=Difficulty.L1,
       camera=Camera.FRONT, size=(1920, 1280)):
    return AnnotationRecord(image_id, camera, size[0], size[1], cls, level, BoundingBox(*box))


def det(image_id, box, score, cls=ObjectClass.VEHICLE, tag="m0", scale=1.0):
    return DetectionRecord(image_id, cls, score, BoundingBox(*box), tag, scale)


@pytest.fixture
def make_gt():
    return gt


@pytest.fixture
def make_det():
    return det


# --- acceptance reporting -------------------------------------------------

_acceptance: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        status = "PASS" if rep.passed else "FAIL"
        if rep.skipped:
            status = "SKIP"
        _acceptance[number] = (title, status, detail)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_acceptance):
        title, status, detail = _acceptance[number]
        line = f"[{status}] {number}. {title}"
        if detail:
            line += f" ({detail})"
        terminalreporter.write_line(line)
