"""Altitude Difference Images and their 3-channel time aggregation.

An ADI holds, per valid pixel, the average of |elevation difference| to the
valid neighbors inside a square window, each divided by the neighbor's pixel
distance. A neighbor is dropped when its source point lies farther than a 3D
correlation threshold from the center's source point. The 3-channel product
stacks the ADIs of the clouds at t-2 and t-1 (motion-compensated into the
LiDAR frame at t) with the untransformed cloud at t.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import NoValidPixels
from .lidar_geometry import (CalibrationSet, PointCloud, RigidTransform,
                             SparseDepthImage, apply_transform, rasterize)
from .trajectory import PoseTrajectory


@dataclass
class AdiConfig:
    """window_radius 2 means a 5x5 window, center excluded."""

    window_radius: int = 2
    correlation_threshold: float = 1.0  # [m] 3D distance beyond which neighbors drop
    export_mode: str = "float"          # float | png8

    def __post_init__(self):
        if self.window_radius < 1:
            raise ValueError("window radius must be >= 1")
        if self.correlation_threshold <= 0.0:
            raise ValueError("correlation threshold must be positive")


@dataclass
class AdiImage:
    """Altitude-difference values (>= 0) with a validity mask; NaN when invalid."""

    values: np.ndarray
    valid: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass
class ThreeChannelAdi:
    """Channels ordered (t-2, t-1, t); channel 2 is always the untransformed frame."""

    channels: list[AdiImage]
    timestamp: float

    def stacked(self) -> np.ndarray:
        """(3, H, W) array, NaN at invalid pixels."""
        return np.stack([c.values for c in self.channels])

    def valid_stacked(self) -> np.ndarray:
        return np.stack([c.valid for c in self.channels])


@njit(cache=True, nogil=True, fastmath=True)
def _adi_kernel(elev, valid, px, py, pz, radius, thr2, inv_dist,
                y_lo, y_hi, x_lo, x_hi, out, out_valid):
    """Generic window evaluation over rows [y_lo, y_hi) x cols [x_lo, x_hi)."""
    h, w = elev.shape
    for y in range(y_lo, y_hi):
        n_lo = max(y - radius, 0)
        n_hi = min(y + radius, h - 1)
        for x in range(x_lo, x_hi):
            if not valid[y, x]:
                out[y, x] = np.nan
                out_valid[y, x] = False
                continue
            cx = px[y, x]
            cy = py[y, x]
            cz = pz[y, x]
            ce = elev[y, x]
            m_lo = max(x - radius, 0)
            m_hi = min(x + radius, w - 1)
            acc = 0.0
            m = 0
            for ny in range(n_lo, n_hi + 1):
                for nx in range(m_lo, m_hi + 1):
                    if ny == y and nx == x:
                        continue
                    if not valid[ny, nx]:
                        continue
                    ddx = cx - px[ny, nx]
                    ddy = cy - py[ny, nx]
                    ddz = cz - pz[ny, nx]
                    if ddx * ddx + ddy * ddy + ddz * ddz > thr2:
                        continue
                    acc += abs(ce - elev[ny, nx]) * inv_dist[ny - y + radius,
                                                             nx - x + radius]
                    m += 1
            if m > 0:
                out[y, x] = acc / m
                out_valid[y, x] = True
            else:
                out[y, x] = np.nan
                out_valid[y, x] = False


@njit(cache=True, nogil=True, fastmath=True)
def _adi_kernel_r2(elev, valid, px, py, pz, thr2, inv_dist, out, out_valid):
    """Radius-2 fast path for the image interior (invalid-pixel coordinates
    are a far sentinel, so the distance test covers the validity test)."""
    h, w = elev.shape
    for y in range(2, h - 2):
        for x in range(2, w - 2):
            if not valid[y, x]:
                out[y, x] = np.nan
                out_valid[y, x] = False
                continue
            cx = px[y, x]
            cy = py[y, x]
            cz = pz[y, x]
            ce = elev[y, x]
            acc = 0.0
            m = 0
            for dy in range(5):
                ny = y + dy - 2
                base = x - 2
                for dx in range(5):
                    if dy == 2 and dx == 2:
                        continue
                    nx = base + dx
                    ddx = cx - px[ny, nx]
                    ddy = cy - py[ny, nx]
                    ddz = cz - pz[ny, nx]
                    if ddx * ddx + ddy * ddy + ddz * ddz <= thr2:
                        acc += abs(ce - elev[ny, nx]) * inv_dist[dy, dx]
                        m += 1
            if m > 0:
                out[y, x] = acc / m
                out_valid[y, x] = True
            else:
                out[y, x] = np.nan
                out_valid[y, x] = False


def _inverse_distance_table(radius: int) -> np.ndarray:
    size = 2 * radius + 1
    table = np.zeros((size, size))
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            if dy or dx:
                table[dy + radius, dx + radius] = 1.0 / math.hypot(dy, dx)
    return table


def compute_adi(depth: SparseDepthImage, cfg: AdiConfig) -> AdiImage:
    """Evaluate the altitude-difference value at every valid pixel.

    Pixels whose neighborhood contributes no usable neighbor (M = 0) come out
    invalid. Raises NoValidPixels when the input has no valid pixel at all.
    """
    if not np.any(depth.valid):
        raise NoValidPixels("depth image has no valid pixels")
    h, w = depth.shape
    # the kernels write every scanned pixel, so uninitialized buffers are fine
    out = np.empty((h, w))
    out_valid = np.empty((h, w), dtype=np.bool_)
    elev = np.ascontiguousarray(depth.elevation)
    valid = np.ascontiguousarray(depth.valid)
    px = np.ascontiguousarray(depth.xyz[0])
    py = np.ascontiguousarray(depth.xyz[1])
    pz = np.ascontiguousarray(depth.xyz[2])
    radius = cfg.window_radius
    thr2 = cfg.correlation_threshold**2
    table = _inverse_distance_table(radius)
    if radius == 2 and h > 4 and w > 4 and thr2 < 1e20:
        _adi_kernel_r2(elev, valid, px, py, pz, thr2, table, out, out_valid)
        # border strips fall back to the generic kernel
        _adi_kernel(elev, valid, px, py, pz, radius, thr2, table,
                    0, 2, 0, w, out, out_valid)
        _adi_kernel(elev, valid, px, py, pz, radius, thr2, table,
                    h - 2, h, 0, w, out, out_valid)
        _adi_kernel(elev, valid, px, py, pz, radius, thr2, table,
                    2, h - 2, 0, 2, out, out_valid)
        _adi_kernel(elev, valid, px, py, pz, radius, thr2, table,
                    2, h - 2, w - 2, w, out, out_valid)
    else:
        _adi_kernel(elev, valid, px, py, pz, radius, thr2, table,
                    0, h, 0, w, out, out_valid)
    return AdiImage(out, out_valid)


def relative_lidar_transform(poses: PoseTrajectory, t_from: float, t_to: float,
                             calib: CalibrationSet) -> RigidTransform:
    """LiDAR-frame motion compensation: frame at ``t_from`` into frame at ``t_to``.

    T = T_lidar<-body . pose(t_to)^-1 . pose(t_from) . T_body<-lidar
    """
    t_lb = calib.t_imu_lidar          # body -> lidar
    t_bl = t_lb.inverse()             # lidar -> body
    r_to, p_to = poses.pose_at(t_to)
    r_from, p_from = poses.pose_at(t_from)
    pose_to = RigidTransform(r_to, p_to)
    pose_from = RigidTransform(r_from, p_from)
    rel = pose_to.inverse().compose(pose_from)   # body@from -> body@to
    out = t_lb.compose(rel).compose(t_bl)
    out.src = "lidar"
    out.dst = "lidar"
    return out


def aggregate_clouds(clouds: list[PointCloud], poses: PoseTrajectory,
                     calib: CalibrationSet) -> list[PointCloud]:
    """Motion-compensate a (t-2, t-1, t) cloud triple into the frame at t.

    Accepts 1 to 3 clouds ordered oldest to newest; missing older entries are
    filled by duplicating the oldest available result. The current cloud is
    returned untransformed. Raises PoseGap when a needed pose cannot be
    interpolated.
    """
    if not clouds:
        raise ValueError("no clouds to aggregate")
    clouds = list(clouds)[-3:]
    current = clouds[-1]
    out: list[PointCloud] = []
    for cloud in clouds[:-1]:
        transform = relative_lidar_transform(
            poses, cloud.timestamp, current.timestamp, calib)
        out.append(apply_transform(cloud, transform))
    out.append(current)
    while len(out) < 3:
        out.insert(0, out[0])
    return out


def channel_transforms(clouds: list[PointCloud], poses: PoseTrajectory,
                       calib: CalibrationSet) -> list[RigidTransform | None]:
    """Motion compensations for a cloud window (None for the current frame).

    Kept separate from the per-channel image work so a frame-parallel caller
    can run the pose interpolation sequentially.
    """
    if not clouds:
        raise ValueError("no clouds to aggregate")
    clouds = list(clouds)[-3:]
    current = clouds[-1]
    out: list[RigidTransform | None] = []
    for cloud in clouds[:-1]:
        out.append(relative_lidar_transform(
            poses, cloud.timestamp, current.timestamp, calib))
    out.append(None)
    return out


def build_three_channel_aligned(clouds: list[PointCloud],
                                transforms: list[RigidTransform | None],
                                calib: CalibrationSet, cfg: AdiConfig,
                                scratch: SparseDepthImage | None = None
                                ) -> ThreeChannelAdi:
    """Per-channel rasterize + ADI with precomputed motion compensations."""
    clouds = list(clouds)[-3:]
    channels: list[AdiImage] = []
    cache: dict[int, AdiImage] = {}
    for cloud, transform in zip(clouds, transforms):
        key = id(cloud)
        if key not in cache:
            cache[key] = compute_adi(
                rasterize(cloud, calib, point_transform=transform, out=scratch),
                cfg)
        channels.append(cache[key])
    while len(channels) < 3:
        channels.insert(0, channels[0])
    return ThreeChannelAdi(channels, timestamp=clouds[-1].timestamp)


def build_three_channel(clouds: list[PointCloud], poses: PoseTrajectory,
                        calib: CalibrationSet, cfg: AdiConfig,
                        scratch: SparseDepthImage | None = None) -> ThreeChannelAdi:
    """Transform (except the current frame), rasterize and compute per-channel ADIs.

    The per-channel motion compensation is applied inside the rasterization
    pass (rigid motion preserves the 3D correlation distances), which avoids
    materializing the transformed clouds. ``scratch`` (one per worker, from
    lidar_geometry.make_raster_scratch) recycles the rasterization buffers.
    """
    transforms = channel_transforms(clouds, poses, calib)
    return build_three_channel_aligned(clouds, transforms, calib, cfg, scratch)


def channel_dispersion(adi: ThreeChannelAdi) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel cross-channel spread (max - min) where all channels are valid."""
    values = adi.stacked()
    valid = np.all(adi.valid_stacked(), axis=0)
    disp = np.zeros(valid.shape)
    if np.any(valid):
        v = values[:, valid]
        disp[valid] = v.max(axis=0) - v.min(axis=0)
    return disp, valid


@dataclass
class DispersionStats:
    """Summary of a 3-channel ADI's cross-channel disagreement."""

    mean: float
    max: float
    pixel_count: int


@dataclass
class PoseSourceComparison:
    """Cross-channel dispersion of two pose-source variants plus their difference."""

    stats_a: DispersionStats
    stats_b: DispersionStats
    delta_mean: float
    delta_max: float


def _dispersion_stats(adi: ThreeChannelAdi,
                      region: np.ndarray | None = None) -> DispersionStats:
    disp, valid = channel_dispersion(adi)
    if region is not None:
        valid = valid & region
    if not np.any(valid):
        return DispersionStats(0.0, 0.0, 0)
    vals = disp[valid]
    return DispersionStats(float(vals.mean()), float(vals.max()), int(vals.size))


def compare_pose_sources(clouds: list[PointCloud], poses_a: PoseTrajectory,
                         poses_b: PoseTrajectory, calib: CalibrationSet,
                         cfg: AdiConfig,
                         region: np.ndarray | None = None) -> PoseSourceComparison:
    """Build the 3-channel ADI under two pose sources and compare their
    cross-channel dispersion (optionally restricted to a pixel region)."""
    adi_a = build_three_channel(clouds, poses_a, calib, cfg)
    adi_b = build_three_channel(clouds, poses_b, calib, cfg)
    stats_a = _dispersion_stats(adi_a, region)
    stats_b = _dispersion_stats(adi_b, region)
    return PoseSourceComparison(
        stats_a=stats_a,
        stats_b=stats_b,
        delta_mean=stats_a.mean - stats_b.mean,
        delta_max=stats_a.max - stats_b.max,
    )
