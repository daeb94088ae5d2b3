"""Synthetic ground-truth scenarios: trajectories, IMU streams, aiding fixes
and ray-cast 3D scenes.

The IMU stream is synthesized by inverting the exact discrete mechanization
updates along the true trajectory, so running the mechanization on the
noise-free stream reproduces the truth to floating-point/truncation level.
True positions are themselves built with the discrete trapezoid recursion,
making the bundle kinematically self-consistent by construction.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import geodesy, kitti_io
from .errors import InfeasibleTrajectory, MissingFile
from .geodesy import GeodeticPosition
from .kalman import AidingMeasurement
from .lidar_geometry import CalibrationSet, PointCloud, RigidTransform
from .mechanization import ImuSample, NavState, position_update
from .trajectory import FLU_TO_FRD, PoseTrajectory, local_tangent_offset

MAX_SPECIFIC_FORCE = 60.0  # [m/s^2] sanity bound on synthesized IMU output
RAY_NEAR = 0.5             # [m] minimum hit distance along a ray


@dataclass
class Box:
    """Axis-aligned box in the local NED frame; velocity makes it dynamic."""

    center: np.ndarray   # (3,) NED [m]
    size: np.ndarray     # (3,) full extents [m]
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        self.size = np.asarray(self.size, dtype=float)
        self.velocity = np.asarray(self.velocity, dtype=float)

    @property
    def dynamic(self) -> bool:
        return bool(np.any(self.velocity != 0.0))


@dataclass
class Scene:
    """Ground plane (constant down-coordinate) plus boxes."""

    ground_down: float = 1.73
    boxes: list[Box] = field(default_factory=list)
    max_range: float = 80.0
    ray_stride: int = 2


@dataclass
class ScenarioSpec:
    """Declarative description of a synthetic run; the seed fixes all randomness."""

    kind: str = "stationary"          # stationary | constant_velocity | circular | waypoints
    duration: float = 10.0            # [s]
    imu_rate: float = 100.0           # [Hz]
    aiding_rate: float = 1.0          # [Hz]
    frame_rate: float = 10.0          # [Hz]
    seed: int = 0
    lat0: float = math.radians(49.0)
    lon0: float = math.radians(8.4)
    h0: float = 112.0
    yaw0: float = 0.0                 # [rad] initial heading (NED, from north)
    speed: float = 5.0                # [m/s] constant_velocity / circular
    radius: float = 50.0              # [m] circular
    velocity_waypoints: list = field(default_factory=list)  # [(t, vn, ve, vd)]
    accel_noise: float = 0.0          # [m/s^2/sqrt(Hz)]
    gyro_noise: float = 0.0           # [rad/s/sqrt(Hz)]
    accel_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gyro_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    aiding_pos_std: float = 0.05      # [m]
    aiding_vel_std: float = 0.05      # [m/s]
    scene: Scene = field(default_factory=Scene)

    def __post_init__(self):
        self.accel_bias = np.asarray(self.accel_bias, dtype=float)
        self.gyro_bias = np.asarray(self.gyro_bias, dtype=float)
        if self.duration <= 0.0 or self.imu_rate <= 0.0:
            raise ValueError("duration and imu_rate must be positive")
        if self.aiding_rate <= 0.0 or self.frame_rate <= 0.0:
            raise ValueError("aiding_rate and frame_rate must be positive")

    @classmethod
    def from_file(cls, path) -> "ScenarioSpec":
        """Parse the declarative scenario config (see docs/formats.md)."""
        path = Path(path)
        if not path.exists():
            raise MissingFile(str(path))
        parser = configparser.ConfigParser()
        parser.read(path)
        spec = cls()
        sc = parser["scenario"] if parser.has_section("scenario") else {}
        spec.kind = sc.get("kind", spec.kind)
        spec.duration = float(sc.get("duration", spec.duration))
        spec.imu_rate = float(sc.get("imu_rate", spec.imu_rate))
        spec.aiding_rate = float(sc.get("aiding_rate", spec.aiding_rate))
        spec.frame_rate = float(sc.get("frame_rate", spec.frame_rate))
        spec.seed = int(sc.get("seed", spec.seed))
        spec.lat0 = math.radians(float(sc.get("lat0_deg", math.degrees(spec.lat0))))
        spec.lon0 = math.radians(float(sc.get("lon0_deg", math.degrees(spec.lon0))))
        spec.h0 = float(sc.get("h0", spec.h0))
        spec.yaw0 = math.radians(float(sc.get("yaw0_deg", math.degrees(spec.yaw0))))
        spec.speed = float(sc.get("speed", spec.speed))
        spec.radius = float(sc.get("radius", spec.radius))
        if "waypoints" in sc:
            spec.velocity_waypoints = [
                tuple(float(x) for x in chunk.split())
                for chunk in sc["waypoints"].split(",") if chunk.strip()]
        if parser.has_section("noise"):
            no = parser["noise"]
            spec.accel_noise = float(no.get("accel_noise", spec.accel_noise))
            spec.gyro_noise = float(no.get("gyro_noise", spec.gyro_noise))
            spec.accel_bias = _vec3(no.get("accel_bias", "0"))
            spec.gyro_bias = _vec3(no.get("gyro_bias", "0"))
            spec.aiding_pos_std = float(no.get("aiding_pos_std", spec.aiding_pos_std))
            spec.aiding_vel_std = float(no.get("aiding_vel_std", spec.aiding_vel_std))
        if parser.has_section("scene"):
            se = parser["scene"]
            scene = Scene()
            scene.ground_down = float(se.get("ground_down", scene.ground_down))
            scene.max_range = float(se.get("max_range", scene.max_range))
            scene.ray_stride = int(se.get("ray_stride", scene.ray_stride))
            for key in sorted(se):
                if key.startswith("box"):
                    vals = [float(x) for x in se[key].split()]
                    if len(vals) not in (6, 9):
                        raise ValueError(f"scene {key}: need 6 or 9 numbers")
                    vel = vals[6:9] if len(vals) == 9 else np.zeros(3)
                    scene.boxes.append(Box(vals[0:3], vals[3:6], vel))
            spec.scene = scene
        return spec

    @property
    def origin(self) -> GeodeticPosition:
        return GeodeticPosition(self.lat0, self.lon0, self.h0)


def _vec3(text: str) -> np.ndarray:
    vals = [float(x) for x in text.replace(",", " ").split()]
    if len(vals) == 1:
        return np.full(3, vals[0])
    if len(vals) == 3:
        return np.array(vals)
    raise ValueError(f"expected 1 or 3 values, got {text!r}")


@dataclass
class GroundTruthBundle:
    """True states at IMU timestamps plus true sensor biases and scene data."""

    states: list[NavState]
    accel_bias: np.ndarray
    gyro_bias: np.ndarray
    frame_times: np.ndarray
    scene: Scene

    def pose_trajectory(self, origin: GeodeticPosition | None = None) -> PoseTrajectory:
        return PoseTrajectory.from_nav_states(self.states, origin=origin)


@dataclass
class SimulationOutput:
    imu: list[ImuSample]                 # noisy stream, one sample per step
    aiding: list[AidingMeasurement]      # decimated noisy fixes
    clouds: list[PointCloud]             # one per frame, LiDAR frame
    dynamic_labels: list[np.ndarray]     # per-cloud bool arrays
    truth: GroundTruthBundle
    noisy_positions: list[GeodeticPosition]  # INS-quality solution per IMU tick
    noisy_velocities: np.ndarray             # (N+1, 3)
    initial_state: NavState


def _truth_velocity(spec: ScenarioSpec, t: float) -> np.ndarray:
    if spec.kind == "stationary":
        return np.zeros(3)
    if spec.kind == "constant_velocity":
        return spec.speed * np.array([math.cos(spec.yaw0), math.sin(spec.yaw0), 0.0])
    if spec.kind == "circular":
        rate = spec.speed / spec.radius
        yaw = spec.yaw0 + rate * t
        return spec.speed * np.array([math.cos(yaw), math.sin(yaw), 0.0])
    if spec.kind == "waypoints":
        wp = spec.velocity_waypoints
        if not wp:
            raise ValueError("waypoints kind needs velocity_waypoints")
        ts = np.array([w[0] for w in wp])
        vs = np.array([w[1:4] for w in wp])
        return np.array([np.interp(t, ts, vs[:, i]) for i in range(3)])
    raise ValueError(f"unknown scenario kind {spec.kind!r}")


def _truth_attitude(spec: ScenarioSpec, t: float) -> np.ndarray:
    if spec.kind == "circular":
        yaw = spec.yaw0 + (spec.speed / spec.radius) * t
        return geodesy.euler_to_matrix(0.0, 0.0, yaw)
    if spec.kind == "waypoints":
        v = _truth_velocity(spec, t)
        if np.hypot(v[0], v[1]) > 1e-9:
            return geodesy.euler_to_matrix(0.0, 0.0, math.atan2(v[1], v[0]))
        return geodesy.euler_to_matrix(0.0, 0.0, spec.yaw0)
    return geodesy.euler_to_matrix(0.0, 0.0, spec.yaw0)


def _build_truth_states(spec: ScenarioSpec) -> list[NavState]:
    n_steps = int(round(spec.duration * spec.imu_rate))
    tau = 1.0 / spec.imu_rate
    states = [NavState(spec.origin, _truth_velocity(spec, 0.0),
                       _truth_attitude(spec, 0.0), 0.0)]
    for k in range(n_steps):
        t_next = (k + 1) * tau
        v_next = _truth_velocity(spec, t_next)
        pos_next = position_update(states[-1], v_next, tau)
        states.append(NavState(pos_next, v_next,
                               _truth_attitude(spec, t_next), t_next))
    return states


def _inverse_imu(states: list[NavState]) -> list[ImuSample]:
    """Solve each discrete update for the IMU sample that produces it."""
    samples = []
    for prev, nxt in zip(states[:-1], states[1:]):
        tau = nxt.timestamp - prev.timestamp
        omega_ie = geodesy.earth_rate_nav(prev.pos.lat)
        omega_en = geodesy.transport_rate(prev.v_eb_n, prev.pos)
        f_n = ((nxt.v_eb_n - prev.v_eb_n) / tau
               - geodesy.gravity_ned(prev.pos)
               + np.cross(omega_en + 2.0 * omega_ie, prev.v_eb_n))
        f_b = prev.c_b_n.T @ f_n
        if float(np.linalg.norm(f_b)) > MAX_SPECIFIC_FORCE:
            raise InfeasibleTrajectory(
                f"specific force {np.linalg.norm(f_b):.1f} m/s^2 at t={prev.timestamp}")
        omega_in = geodesy.skew(omega_ie) + geodesy.skew(omega_en)
        m = prev.c_b_n.T @ (nxt.c_b_n + omega_in @ prev.c_b_n * tau)
        omega_b = geodesy.unskew(m) / tau
        samples.append(ImuSample(f_b, omega_b, nxt.timestamp))
    return samples


def generate(spec: ScenarioSpec, calib: CalibrationSet | None = None,
             clouds: bool = True) -> SimulationOutput:
    """Produce IMU/aiding streams, per-frame clouds and the truth bundle.

    ``clouds=False`` skips the ray caster for navigation-only scenarios.
    """
    if calib is None:
        calib = synthetic_calibration()
    rng = np.random.default_rng(spec.seed)
    states = _build_truth_states(spec)
    clean_imu = _inverse_imu(states)

    sigma_f = spec.accel_noise * math.sqrt(spec.imu_rate)
    sigma_w = spec.gyro_noise * math.sqrt(spec.imu_rate)
    noisy_imu = []
    for s in clean_imu:
        f = s.f_ib_b + spec.accel_bias + (sigma_f * rng.standard_normal(3)
                                          if sigma_f > 0.0 else 0.0)
        w = s.omega_ib_b + spec.gyro_bias + (sigma_w * rng.standard_normal(3)
                                             if sigma_w > 0.0 else 0.0)
        noisy_imu.append(ImuSample(f, w, s.timestamp))

    # INS-quality noisy solution at every tick; aiding decimates this stream
    noisy_positions = []
    noisy_velocities = np.empty((len(states), 3))
    for i, s in enumerate(states):
        rn = geodesy.meridian_radius(s.pos.lat) + s.pos.height
        re = geodesy.normal_radius(s.pos.lat) + s.pos.height
        dn, de, dh = spec.aiding_pos_std * rng.standard_normal(3)
        noisy_positions.append(GeodeticPosition(
            s.pos.lat + dn / rn,
            s.pos.lon + de / (re * math.cos(s.pos.lat)),
            s.pos.height + dh))
        noisy_velocities[i] = s.v_eb_n + spec.aiding_vel_std * rng.standard_normal(3)

    stride = max(1, int(round(spec.imu_rate / spec.aiding_rate)))
    aiding = []
    for i in range(stride, len(states), stride):
        aiding.append(AidingMeasurement(
            pos=noisy_positions[i], v_eb_n=noisy_velocities[i].copy(),
            timestamp=states[i].timestamp,
            pos_std=np.full(3, spec.aiding_pos_std),
            vel_std=np.full(3, spec.aiding_vel_std)))

    frame_stride = max(1, int(round(spec.imu_rate / spec.frame_rate)))
    frame_indices = list(range(0, len(states), frame_stride))
    frame_times = np.array([states[i].timestamp for i in frame_indices])
    frame_clouds: list[PointCloud] = []
    labels: list[np.ndarray] = []
    if clouds:
        for i in frame_indices:
            cloud, dyn = raycast_scene(states[i], spec.scene, calib, spec.origin)
            frame_clouds.append(cloud)
            labels.append(dyn)

    truth = GroundTruthBundle(states, spec.accel_bias.copy(),
                              spec.gyro_bias.copy(), frame_times, spec.scene)
    return SimulationOutput(
        imu=noisy_imu, aiding=aiding, clouds=frame_clouds,
        dynamic_labels=labels, truth=truth, noisy_positions=noisy_positions,
        noisy_velocities=noisy_velocities, initial_state=states[0].copy())


# --- scene ray casting ---------------------------------------------------------------

def synthetic_calibration(height: int = 384, width: int = 1280,
                          focal: float = 720.0) -> CalibrationSet:
    """KITTI-like calibration for synthetic sequences.

    Camera frame: x right, y down, z forward. LiDAR frame: x forward,
    y left, z up, mounted 0.4 m above and 0.5 m ahead of the vehicle unit.
    """
    r_cam_velo = np.array([[0.0, -1.0, 0.0],
                           [0.0, 0.0, -1.0],
                           [1.0, 0.0, 0.0]])
    t_cam_velo = np.array([0.02, 0.05, -0.10])
    t_lidar_cam = RigidTransform(r_cam_velo, t_cam_velo, src="lidar", dst="camera")
    # vehicle unit (FLU) -> lidar: pure translation
    t_imu_lidar = RigidTransform(np.eye(3), np.array([-0.5, 0.0, -0.4]),
                                 src="body", dst="lidar")
    p_rect = np.array([[focal, 0.0, width / 2.0, 0.0],
                       [0.0, focal, height / 2.0, 0.0],
                       [0.0, 0.0, 1.0, 0.0]])
    return CalibrationSet(t_lidar_cam=t_lidar_cam, r_rect=np.eye(4),
                          p_rect=p_rect, t_imu_lidar=t_imu_lidar,
                          image_size=(height, width))


def _nav_from_rectcam(state: NavState, calib: CalibrationSet,
                      origin: GeodeticPosition) -> RigidTransform:
    r_flu_n = state.c_b_n @ FLU_TO_FRD
    t_body = local_tangent_offset(state.pos, origin)
    nav_from_imu = RigidTransform(r_flu_n, t_body)
    imu_from_velo = calib.t_imu_lidar.inverse()
    rect_rot = RigidTransform(calib.r_rect[:3, :3], np.zeros(3))
    rect_from_velo = rect_rot.compose(calib.t_lidar_cam)
    velo_from_rect = rect_from_velo.inverse()
    return nav_from_imu.compose(imu_from_velo).compose(velo_from_rect)


def raycast_scene(state: NavState, scene: Scene, calib: CalibrationSet,
                  origin: GeodeticPosition) -> tuple[PointCloud, np.ndarray]:
    """Cast rays through pixel centers and intersect the scene primitives.

    Returns the hit points in the LiDAR frame plus a per-point dynamic flag.
    Requires p_rect[2, 3] == 0 (true for the synthetic calibration).
    """
    p = calib.p_rect
    if p[2, 3] != 0.0:
        raise ValueError("ray caster requires a zero z-offset projection")
    h, wdt = calib.image_size
    stride = scene.ray_stride
    fu, fv = p[0, 0], p[1, 1]
    cu, cv = p[0, 2], p[1, 2]
    us = np.arange(0, wdt, stride) + 0.5
    vs = np.arange(0, h, stride) + 0.5
    uu, vv = np.meshgrid(us, vs)
    dirs = np.stack([(uu.ravel() - cu) / fu,
                     (vv.ravel() - cv) / fv,
                     np.ones(uu.size)], axis=1)
    o_rect = np.array([-p[0, 3] / fu, -p[1, 3] / fv, 0.0])

    nav_from_rect = _nav_from_rectcam(state, calib, origin)
    o = nav_from_rect.apply(o_rect[None, :])[0]
    d = dirs @ nav_from_rect.r.T

    n_rays = len(d)
    best_t = np.full(n_rays, np.inf)
    best_dyn = np.zeros(n_rays, dtype=bool)

    # ground plane: constant down-coordinate
    dz = d[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t_plane = (scene.ground_down - o[2]) / dz
    ok = (dz > 1e-12) & (t_plane > RAY_NEAR) & (t_plane < best_t)
    best_t[ok] = t_plane[ok]

    t_now = state.timestamp
    for box in scene.boxes:
        center = box.center + box.velocity * t_now
        lo = center - 0.5 * box.size
        hi = center + 0.5 * box.size
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (lo[None, :] - o[None, :]) / d
            t2 = (hi[None, :] - o[None, :]) / d
        tmin = np.minimum(t1, t2).max(axis=1)
        tmax = np.maximum(t1, t2).min(axis=1)
        hit = (tmax >= tmin) & (tmin > RAY_NEAR) & (tmin < best_t)
        best_t[hit] = tmin[hit]
        best_dyn[hit] = box.dynamic

    hit = np.isfinite(best_t) & (best_t <= scene.max_range)
    pts_nav = o[None, :] + best_t[hit, None] * d[hit]
    rect_from_nav = nav_from_rect.inverse()
    rect_rot = RigidTransform(calib.r_rect[:3, :3], np.zeros(3))
    rect_from_velo = rect_rot.compose(calib.t_lidar_cam)
    pts_velo = rect_from_velo.inverse().apply(rect_from_nav.apply(pts_nav))
    cloud = PointCloud(pts_velo, np.full(len(pts_velo), 0.5),
                       frame="lidar", timestamp=state.timestamp)
    return cloud, best_dyn[hit]


# --- sequence writer --------------------------------------------------------------------

def write_sequence(out_dir, sim: SimulationOutput, calib: CalibrationSet) -> None:
    """Write a simulation as a KITTI-raw-layout directory (plus a truth/ subdir)."""
    out_dir = Path(out_dir)
    states = sim.truth.states

    # OXTS records at IMU rate: noisy INS solution + noisy IMU readings
    oxts_dir = out_dir / "oxts" / "data"
    oxts_dir.mkdir(parents=True, exist_ok=True)
    times = [s.timestamp for s in states]
    flip = np.array([1.0, -1.0, -1.0])
    for i, s in enumerate(states):
        pos = sim.noisy_positions[i]
        vel = sim.noisy_velocities[i]
        if i == 0:
            f_flu = flip * sim.imu[0].f_ib_b
            w_flu = flip * sim.imu[0].omega_ib_b
        else:
            f_flu = flip * sim.imu[i - 1].f_ib_b
            w_flu = flip * sim.imu[i - 1].omega_ib_b
        c_flu_enu = kitti_io.NED_FROM_ENU @ s.c_b_n @ FLU_TO_FRD
        roll, pitch, yaw = geodesy.matrix_to_euler(c_flu_enu)
        v_flu = FLU_TO_FRD @ s.c_b_n.T @ vel  # body-frame velocity, FLU axes
        rec = kitti_io.OxtsRecord(
            lat=pos.lat, lon=pos.lon, alt=pos.height,
            roll=roll, pitch=pitch, yaw=yaw,
            vn=vel[0], ve=vel[1], vf=v_flu[0], vl=v_flu[1], vu=-vel[2],
            ax=f_flu[0], ay=f_flu[1], az=f_flu[2],
            af=f_flu[0], al=f_flu[1], au=f_flu[2],
            wx=w_flu[0], wy=w_flu[1], wz=w_flu[2],
            wf=w_flu[0], wl=w_flu[1], wu=w_flu[2],
            pos_accuracy=0.05, vel_accuracy=0.05,
            navstat=4, numsats=10, posmode=5, velmode=5, orimode=6,
            timestamp=s.timestamp)
        kitti_io.atomic_write_text(oxts_dir / f"{i:010d}.txt",
                                   kitti_io.format_oxts_line(rec) + "\n")
    kitti_io.write_timestamps(out_dir / "oxts" / "timestamps.txt", times)

    velo_dir = out_dir / "velodyne_points" / "data"
    velo_dir.mkdir(parents=True, exist_ok=True)
    for i, cloud in enumerate(sim.clouds):
        kitti_io.write_velodyne(velo_dir / f"{i:010d}.bin", cloud)
    kitti_io.write_timestamps(out_dir / "velodyne_points" / "timestamps.txt",
                              list(sim.truth.frame_times))

    kitti_io.write_calibration(out_dir, calib)

    truth_dir = out_dir / "truth"
    truth_dir.mkdir(parents=True, exist_ok=True)
    kitti_io.write_poses(sim.truth.pose_trajectory(), truth_dir / "poses.txt")
    bias_lines = [
        "accel_bias: " + " ".join(f"{v:.17g}" for v in sim.truth.accel_bias),
        "gyro_bias: " + " ".join(f"{v:.17g}" for v in sim.truth.gyro_bias),
    ]
    kitti_io.atomic_write_text(truth_dir / "biases.txt", "\n".join(bias_lines) + "\n")
    labels_dir = truth_dir / "labels"
    labels_dir.mkdir(parents=True, exist_ok=True)
    for i, dyn in enumerate(sim.dynamic_labels):
        kitti_io.write_tensor(labels_dir / f"{i:010d}.tnsr",
                              dyn.astype(np.uint8))
