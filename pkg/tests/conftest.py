import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from reflnbv.geometry import PinholeCamera, RigidPose, StereoRig

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def front_camera(distance=500.0, width=64, height=48, fx=80.0):
    """Camera on +z looking at the origin (image y down = world -y)."""
    pose = RigidPose.look_at((0.0, 0.0, distance), (0.0, 0.0, 0.0), (0.0, 1.0, 0.0))
    return PinholeCamera(fx, fx, (width - 1) / 2, (height - 1) / 2, width, height, pose)


@pytest.fixture
def camera():
    return front_camera()


@pytest.fixture
def rig():
    return StereoRig.standard(64, 48, 80.0, baseline=60.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed after the run
ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture
def criterion():
    def record(name: str, ok: bool, detail: str) -> None:
        ACCEPTANCE.append((name, bool(ok), detail))
        assert ok, f"{name}: {detail}"
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
