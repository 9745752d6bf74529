"""Next-best-view planning for active stereo depth completion of reflective objects."""

__version__ = "0.1.0"

from .bvh import BACKEND  # noqa: E402
from .geometry import PinholeCamera, RigidPose, StereoRig  # noqa: E402
from .mesh import TriangleMesh  # noqa: E402
from .reflectance import DIN_CONNECTOR_METAL, MATTE, TUBE_FITTING, PhongMaterial  # noqa: E402
from .response import ResponseCurve, recover_response  # noqa: E402
from .scene import SceneInstance, SceneModel, raycast_view  # noqa: E402
from .sensor import SensingConfig, sensing_probability, simulate_capture  # noqa: E402

__all__ = [
    "BACKEND", "PinholeCamera", "RigidPose", "StereoRig", "TriangleMesh", "PhongMaterial",
    "TUBE_FITTING", "DIN_CONNECTOR_METAL", "MATTE", "ResponseCurve", "recover_response",
    "SceneInstance", "SceneModel", "raycast_view", "SensingConfig", "sensing_probability",
    "simulate_capture",
]
