"""navadi: inertial navigation refinement and altitude-difference imaging.

From raw IMU/GNSS records and LiDAR point clouds: strapdown mechanization,
an open-loop loosely-coupled 15-state error-state Kalman filter, ego-motion
point-cloud aggregation, 3-channel altitude-difference images, the fusion /
multi-task-loss arithmetic, and the segmentation/depth evaluation metrics.
"""

from .adi import (AdiConfig, AdiImage, ThreeChannelAdi, aggregate_clouds,
                  build_three_channel, compare_pose_sources, compute_adi)
from .fusion import combine_losses, fuse
from .geodesy import (GeodeticPosition, earth_rate_nav, euler_to_matrix,
                      gravity_ned, matrix_to_euler, meridian_radius,
                      normal_radius, skew, transport_rate)
from .kalman import (AidingMeasurement, ErrorState15, IntegrationResult,
                     KalmanConfig, correct_output, predict, run_integration,
                     system_matrix, update)
from .lidar_geometry import (CalibrationSet, PointCloud, RigidTransform,
                             SparseDepthImage, apply_transform, project_point,
                             rasterize)
from .mechanization import ImuSample, NavState, mechanize
from .metrics import (ConfusionCounts, confusion, max_f_and_ap,
                      metrics_from_counts, silog)
from .scenario import ScenarioSpec, SimulationOutput, generate
from .trajectory import PoseTrajectory

__version__ = "0.1.0"
