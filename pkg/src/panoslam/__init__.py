"""Panoramic depth-image lidar SLAM with IMU de-rotation and pose-graph loop closure."""

from .geometry import Pose
from .panorama import DepthPanorama, ProjectionModel

__all__ = ["Pose", "DepthPanorama", "ProjectionModel"]
__version__ = "0.1.0"
