import math

import numpy as np
import pytest

from ocureg import synth
from ocureg.camera import Intrinsics, Pose6DoF, compose, invert


@pytest.fixture(scope="session")
def paper_k() -> Intrinsics:
    # calibration of the clinical slit-lamp rig (1600x1200 sensor)
    return Intrinsics(fx=3758.9, fy=3758.9, cx=138.8, cy=85.4, width=1600, height=1200)


@pytest.fixture(scope="session")
def synth_k() -> Intrinsics:
    return synth.default_intrinsics(64)


@pytest.fixture(scope="session")
def eye_model() -> synth.EyeModel:
    return synth.default_eye_model(seed=7)


@pytest.fixture(scope="session")
def base_sample(eye_model, synth_k) -> synth.SceneSample:
    return synth.render(eye_model, synth.default_pose(), synth_k)


@pytest.fixture(scope="session")
def scene_pair(eye_model, synth_k):
    """Source/target renders with a small ground-truth relative motion."""
    target_pose = synth.default_pose()
    source_pose = compose(
        Pose6DoF(tx=0.5, ty=-0.3, tz=0.4, rx=math.radians(1.0), ry=math.radians(-1.5), rz=math.radians(0.8)),
        target_pose,
    )
    source = synth.render(eye_model, source_pose, synth_k)
    target = synth.render(eye_model, target_pose, synth_k)
    return source, target, synth.relative_pose(source, target)


def rotation_error_deg(a: Pose6DoF, b: Pose6DoF) -> float:
    """Geodesic angle between the rotation parts, in degrees."""
    r = a.rotation_matrix().T @ b.rotation_matrix()
    c = (np.trace(r) - 1.0) / 2.0
    return math.degrees(math.acos(min(1.0, max(-1.0, c))))


def translation_error_mm(a: Pose6DoF, b: Pose6DoF) -> float:
    return float(np.linalg.norm(a.translation() - b.translation()))
