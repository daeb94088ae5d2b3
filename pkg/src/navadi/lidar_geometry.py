"""Rigid transforms, camera calibration and LiDAR-to-image projection.

Projection follows the rectified pinhole chain y = P_rect R_rect T_lidar_cam x
for homogeneous LiDAR points x; pixel coordinates are u = y0/y2, v = y1/y2
and the depth is y2. Rasterization assigns points to floor(u), floor(v) and
keeps the nearest depth per pixel.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import EmptyOutputWarning, FrameMismatch

DEPTH_MIN = 0.1  # [m] cull threshold for self-returns / points behind the camera

# stored at invalid pixels of the per-pixel point buffer; far enough that any
# 3D correlation check rejects it, finite so fast-math kernels stay defined
INVALID_COORD = 1e15


@dataclass
class PointCloud:
    """N points with reflectance, tagged with a frame name and timestamp."""

    xyz: np.ndarray           # (N, 3) [m]
    reflectance: np.ndarray   # (N,)
    frame: str = "lidar"
    timestamp: float = 0.0

    def __post_init__(self):
        self.xyz = np.asarray(self.xyz, dtype=float).reshape(-1, 3)
        self.reflectance = np.asarray(self.reflectance, dtype=float).reshape(-1)
        if len(self.reflectance) != len(self.xyz):
            raise ValueError("reflectance length does not match point count")

    def __len__(self) -> int:
        return len(self.xyz)


@dataclass
class RigidTransform:
    """p_dst = R @ p_src + t. Frame tags are optional; None disables checking."""

    r: np.ndarray
    t: np.ndarray
    src: str | None = None
    dst: str | None = None

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=float).reshape(3, 3)
        self.t = np.asarray(self.t, dtype=float).reshape(3)

    @classmethod
    def identity(cls, frame: str | None = None) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3), src=frame, dst=frame)

    @classmethod
    def from_matrix(cls, m: np.ndarray, src: str | None = None,
                    dst: str | None = None) -> "RigidTransform":
        m = np.asarray(m, dtype=float)
        return cls(m[:3, :3], m[:3, 3], src=src, dst=dst)

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.r
        m[:3, 3] = self.t
        return m

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.r.T, -self.r.T @ self.t,
                              src=self.dst, dst=self.src)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other: (self @ other)(p) = self(other(p))."""
        return RigidTransform(self.r @ other.r, self.r @ other.t + self.t,
                              src=other.src, dst=self.dst)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return points @ self.r.T + self.t


def apply_transform(cloud: PointCloud, transform: RigidTransform) -> PointCloud:
    """Transform every point; reflectance preserved, frame tag updated."""
    if transform.src is not None and cloud.frame != transform.src:
        raise FrameMismatch(
            f"cloud in frame '{cloud.frame}', transform expects '{transform.src}'")
    frame = transform.dst if transform.dst is not None else cloud.frame
    return PointCloud(transform.apply(cloud.xyz), cloud.reflectance.copy(),
                      frame=frame, timestamp=cloud.timestamp)


@dataclass
class CalibrationSet:
    """Sensor chain calibration for one sequence.

    ``t_lidar_cam`` maps LiDAR points into the (unrectified) camera frame,
    ``r_rect`` is the 4x4 rectifying rotation, ``p_rect`` the 3x4 rectified
    projection in pixels, ``t_imu_lidar`` maps vehicle-unit points into the
    LiDAR frame. ``image_size`` is (height, width).
    """

    t_lidar_cam: RigidTransform
    r_rect: np.ndarray
    p_rect: np.ndarray
    t_imu_lidar: RigidTransform
    image_size: tuple[int, int]
    _m: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.r_rect = np.asarray(self.r_rect, dtype=float).reshape(4, 4)
        self.p_rect = np.asarray(self.p_rect, dtype=float).reshape(3, 4)
        if self.p_rect[0, 0] <= 0.0 or self.p_rect[1, 1] <= 0.0:
            raise ValueError("projection focal entries must be positive")
        self._m = self.p_rect @ self.r_rect @ self.t_lidar_cam.as_matrix()

    @property
    def projection_chain(self) -> np.ndarray:
        """The combined 3x4 matrix P_rect @ R_rect @ T_lidar_cam."""
        return self._m

    def pre_transformed(self, transform: RigidTransform) -> "CalibrationSet":
        """Calibration accepting points in ``transform.src`` instead of the LiDAR frame."""
        return CalibrationSet(
            t_lidar_cam=self.t_lidar_cam.compose(transform),
            r_rect=self.r_rect,
            p_rect=self.p_rect,
            t_imu_lidar=self.t_imu_lidar,
            image_size=self.image_size,
        )


def project_point(x_hom, calib: CalibrationSet,
                  depth_min: float = DEPTH_MIN):
    """Project one homogeneous 4-vector; returns (u, v, depth) or None if culled."""
    x = np.asarray(x_hom, dtype=float).reshape(4)
    if x[3] <= 0.0:
        raise ValueError("homogeneous w-component must be positive")
    x = x / x[3]
    y = calib.projection_chain @ x
    depth = y[2]
    if depth <= depth_min:
        return None
    u = y[0] / depth
    v = y[1] / depth
    height, width = calib.image_size
    if not (0.0 <= u < width and 0.0 <= v < height):
        return None
    return float(u), float(v), float(depth)


def project_points(xyz: np.ndarray, calib: CalibrationSet,
                   depth_min: float = DEPTH_MIN):
    """Vectorized projection; returns (u, v, depth, keep-mask) over all points."""
    m = calib.projection_chain
    y = xyz @ m[:, :3].T + m[:, 3]
    depth = y[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = y[:, 0] / depth
        v = y[:, 1] / depth
    height, width = calib.image_size
    keep = (depth > depth_min) & (u >= 0.0) & (u < width) & (v >= 0.0) & (v < height)
    return u, v, depth, keep


@dataclass
class SparseDepthImage:
    """Per-pixel nearest depth plus the source point and its elevation.

    ``elevation`` is the LiDAR-frame up-axis (z) value of the point that won
    the pixel; ``xyz`` holds that point's LiDAR-frame coordinates as a
    (3, H, W) stack (used for the 3D correlation check downstream); the
    rasterizer shares ``elevation`` with ``xyz[2]``. ``valid`` is the
    authoritative mask; invalid pixels hold NaN in ``depth`` and the
    INVALID_COORD sentinel in ``elevation``/``xyz``.
    """

    depth: np.ndarray       # (H, W) [m]
    elevation: np.ndarray   # (H, W) [m]
    xyz: np.ndarray         # (3, H, W) [m]
    valid: np.ndarray       # (H, W) bool

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape


@njit(cache=True, nogil=True)
def _reset_raster_kernel(depth_img, xyz_img, valid, invalid_coord):
    h, w = depth_img.shape
    for y in range(h):
        for x in range(w):
            if valid[y, x]:
                depth_img[y, x] = np.nan
                xyz_img[0, y, x] = invalid_coord
                xyz_img[1, y, x] = invalid_coord
                xyz_img[2, y, x] = invalid_coord
                valid[y, x] = False


def make_raster_scratch(calib: "CalibrationSet") -> "SparseDepthImage":
    """Preallocated buffers for repeated rasterization (see rasterize(out=...))."""
    height, width = calib.image_size
    xyz = np.full((3, height, width), INVALID_COORD)
    return SparseDepthImage(
        np.full((height, width), np.nan),
        xyz[2],  # elevation shares the z-component storage
        xyz,
        np.zeros((height, width), dtype=np.bool_),
    )


@njit(cache=True, nogil=True)
def _project_raster_kernel(xyz, m, t, depth_min, height, width,
                           depth_img, xyz_img, valid):
    for i in range(xyz.shape[0]):
        x0 = xyz[i, 0]
        y0 = xyz[i, 1]
        z0 = xyz[i, 2]
        # rigid pre-transform fused into the pass (identity when t is I|0)
        x = t[0, 0] * x0 + t[0, 1] * y0 + t[0, 2] * z0 + t[0, 3]
        y = t[1, 0] * x0 + t[1, 1] * y0 + t[1, 2] * z0 + t[1, 3]
        z = t[2, 0] * x0 + t[2, 1] * y0 + t[2, 2] * z0 + t[2, 3]
        d = m[2, 0] * x + m[2, 1] * y + m[2, 2] * z + m[2, 3]
        if d <= depth_min:
            continue
        u = (m[0, 0] * x + m[0, 1] * y + m[0, 2] * z + m[0, 3]) / d
        v = (m[1, 0] * x + m[1, 1] * y + m[1, 2] * z + m[1, 3]) / d
        if u < 0.0 or u >= width or v < 0.0 or v >= height:
            continue
        c = int(math.floor(u))
        r = int(math.floor(v))
        if (not valid[r, c]) or d < depth_img[r, c]:
            depth_img[r, c] = d
            xyz_img[0, r, c] = x
            xyz_img[1, r, c] = y
            xyz_img[2, r, c] = z
            valid[r, c] = True


def rasterize(cloud: PointCloud, calib: CalibrationSet,
              depth_min: float = DEPTH_MIN,
              point_transform: RigidTransform | None = None,
              out: SparseDepthImage | None = None) -> SparseDepthImage:
    """Project a cloud and keep the nearest depth per pixel.

    Pixel assignment is floor(u), floor(v). Collisions resolve to the
    smallest depth; that point's LiDAR-frame coordinates and z-elevation are
    stored alongside. ``point_transform`` applies a rigid motion to every
    point inside the projection pass (equivalent to transforming the cloud
    first, without materializing it). ``out`` recycles buffers from
    :func:`make_raster_scratch`; the returned image aliases them and is
    invalidated by the next call. Warns (EmptyOutputWarning) when under 1%
    of pixels fill.
    """
    height, width = calib.image_size
    if out is None:
        out = make_raster_scratch(calib)
    else:
        if out.shape != (height, width):
            raise ValueError("scratch buffers sized for a different image")
        _reset_raster_kernel(out.depth, out.xyz, out.valid, INVALID_COORD)

    if point_transform is None:
        t = np.eye(3, 4)
    else:
        t = point_transform.as_matrix()[:3, :]
    if len(cloud) > 0:
        _project_raster_kernel(
            np.ascontiguousarray(cloud.xyz), calib.projection_chain,
            np.ascontiguousarray(t), depth_min, height, width,
            out.depth, out.xyz, out.valid)

    filled = float(np.count_nonzero(out.valid)) / out.valid.size
    if filled < 0.01:
        warnings.warn(
            f"only {filled:.2%} of pixels filled; calibration mismatch?",
            EmptyOutputWarning, stacklevel=2)
    return out
