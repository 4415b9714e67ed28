import math

import pytest

from orthosonar.geometry import SonarExtrinsics
from orthosonar.simulator import cylinder_scene, orbit_poses, render_pair
from orthosonar.sonar_image import SonarIntrinsics

# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    def emit(criterion: str, passed: bool, detail: str) -> None:
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


# 512 bins over 5 m, centred on the 5 m stand-off
CYLINDER_INTRINSICS = SonarIntrinsics(2.5, 7.5, 512, 256, math.radians(130), math.radians(20))


@pytest.fixture(scope="session")
def cylinder_frames():
    scene = cylinder_scene()
    poses = orbit_poses(radius=5.0, count=20)
    ext = SonarExtrinsics()
    frames = [render_pair(scene, CYLINDER_INTRINSICS, CYLINDER_INTRINSICS, ext, p) for p in poses]
    return scene, frames
