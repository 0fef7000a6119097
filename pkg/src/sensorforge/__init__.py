"""Headless multi-sensor simulation over procedurally generated indoor scenes."""

from .echo import Echo, EchoConfig, PulseEcho
from .geometry import Box, Mesh, Plane, Pose, Sphere
from .kernel import SimClock, Simulation, Weather
from .lidar import Lidar, LidarConfig, ReflectanceLimitCurve
from .localization import GridSpec, localization_error_map, multilaterate
from .motion import DiffDriveState, Trajectory, WaypointActor, diffdrive_step
from .procgen import GenerationRules, PlacementList, generate, instantiate
from .rf import Anchor, RfConfig, RfPath, measure_range, trace_paths
from .scene import LabelRegistry, Material, ObjectInstance, Scene

__version__ = "0.1.0"

__all__ = [
    "Anchor", "Box", "DiffDriveState", "Echo", "EchoConfig", "GenerationRules", "GridSpec", "LabelRegistry", "Lidar",
    "LidarConfig", "Material", "Mesh", "ObjectInstance", "PlacementList", "Plane", "Pose", "PulseEcho",
    "ReflectanceLimitCurve", "RfConfig", "RfPath", "Scene", "SimClock", "Simulation", "Sphere", "Trajectory",
    "WaypointActor", "Weather", "diffdrive_step", "generate", "instantiate", "localization_error_map",
    "measure_range", "multilaterate", "trace_paths",
]
