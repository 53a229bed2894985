"""Obstacle distance estimation for railway perception.

LiDAR clouds are projected into sparse depth maps that correct a monocular
dense depth map; detections intersecting the widened track mask are
flagged as obstacles and their distances estimated and smoothed over time.
"""

from .formats import (CameraModel, DepthRaster, DistanceRecord, FormatError, FrameBundle, InstanceMask,
                      PointCloud, RigidPose, SparseDepthMap)
from .geometry import merge_sparse_maps, project_point_cloud
from .fusion import compute_residuals, interpolate_residuals, refine_depth
from .roi import discriminate_obstacle, expand_track_mask, validate_track_mask
from .distance import estimate_mode, estimate_object_distance, mean_k_smallest
from .tracking import TemporalFilter

__version__ = "0.1.0"
