"""Open-loop loosely-coupled 15-state error-state Kalman filter.

The filter estimates the error of the mechanized navigation solution; the
mechanization itself is never touched (open loop), corrections are applied
to the output stream only.

State vector (15,), in this order and with these units:

  0:3   position error, local-tangent meters (north, east, height-up)
  3:6   velocity error, NED [m/s]
  6:9   attitude error [rad]; corrected C = (I - skew(att_err)) @ C_mech
  9:12  accelerometer bias [m/s^2], additive on the measured specific force
  12:15 gyroscope bias [rad/s], additive on the measured angular rate

Position error is kept in meters rather than (rad, rad, m) to avoid the
rad-scale conditioning gap between horizontal and vertical channels; the
geodetic innovation is formed in meters with the curvature radii at the
current solution.

Aiding uses position + velocity (6-dim measurement). Attitude aiding is a
deliberate extension point: add rows to the measurement matrix in
:func:`update` and extend AidingMeasurement accordingly.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import geodesy
from .errors import (CovarianceNotPSD, EmptyStream, InnovationGateExceeded,
                     MissingFile, NonMonotonicTime)
from .geodesy import GeodeticPosition
from .mechanization import ImuSample, NavState, mechanize
from .trajectory import PoseTrajectory

POS = slice(0, 3)
VEL = slice(3, 6)
ATT = slice(6, 9)
BA = slice(9, 12)
BG = slice(12, 15)

# sign flip between NED-down position error and the height-up third component
_S_HEIGHT = np.diag([1.0, 1.0, -1.0])


@dataclass
class ErrorState15:
    """15-dimensional error state; see module docstring for layout and units."""

    x: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        if self.x.shape != (15,):
            raise ValueError("error state must be a 15-vector")
        if not np.all(np.isfinite(self.x)):
            raise ValueError("non-finite error state")

    @classmethod
    def zero(cls) -> "ErrorState15":
        return cls(np.zeros(15))

    @property
    def pos_err(self) -> np.ndarray:
        return self.x[POS]

    @property
    def vel_err(self) -> np.ndarray:
        return self.x[VEL]

    @property
    def att_err(self) -> np.ndarray:
        return self.x[ATT]

    @property
    def accel_bias(self) -> np.ndarray:
        return self.x[BA]

    @property
    def gyro_bias(self) -> np.ndarray:
        return self.x[BG]


@dataclass
class AidingMeasurement:
    """Position + velocity fix with per-channel noise standard deviations."""

    pos: GeodeticPosition
    v_eb_n: np.ndarray
    timestamp: float
    pos_std: np.ndarray  # (3,) [m] north, east, height
    vel_std: np.ndarray  # (3,) [m/s]

    def __post_init__(self):
        self.v_eb_n = np.asarray(self.v_eb_n, dtype=float)
        self.pos_std = np.asarray(self.pos_std, dtype=float)
        self.vel_std = np.asarray(self.vel_std, dtype=float)


@dataclass
class KalmanConfig:
    """Filter noise model and gating; defaults sized for an RT3003-class unit.

    The defaults are documented starting points, not calibrated truth; all of
    them can be overridden from a config file (see :meth:`from_file`).
    """

    accel_noise_density: float = 1e-2   # [m/s^2/sqrt(Hz)]
    gyro_noise_density: float = 1e-4    # [rad/s/sqrt(Hz)]
    accel_bias_rw: float = 1e-5         # [m/s^2 * sqrt(Hz)] bias random walk
    gyro_bias_rw: float = 1e-7          # [rad/s * sqrt(Hz)]
    init_pos_std: float = 10.0          # [m]
    init_vel_std: float = 0.5           # [m/s]
    init_att_std: float = 0.02          # [rad]
    init_accel_bias_std: float = 0.1    # [m/s^2]
    init_gyro_bias_std: float = 1e-3    # [rad/s]
    aiding_pos_std: float = 0.05        # [m] default measurement noise
    aiding_vel_std: float = 0.05        # [m/s]
    gate_chi2: float = 22.46            # chi-square(6 dof, p=0.999)
    time_align_tol: float = 0.005       # [s]

    @classmethod
    def from_file(cls, path) -> "KalmanConfig":
        """Load overrides from the ``[kalman]`` section of a key=value file."""
        path = Path(path)
        if not path.exists():
            raise MissingFile(str(path))
        parser = configparser.ConfigParser()
        parser.read(path)
        cfg = cls()
        if parser.has_section("kalman"):
            for key, value in parser.items("kalman"):
                if not hasattr(cfg, key):
                    raise KeyError(f"unknown kalman config key: {key}")
                setattr(cfg, key, float(value))
        return cfg

    def initial_covariance(self) -> np.ndarray:
        d = np.concatenate([
            np.full(3, self.init_pos_std**2),
            np.full(3, self.init_vel_std**2),
            np.full(3, self.init_att_std**2),
            np.full(3, self.init_accel_bias_std**2),
            np.full(3, self.init_gyro_bias_std**2),
        ])
        return np.diag(d)

    def process_noise(self) -> np.ndarray:
        """Continuous-time PSD matrix Q; predict applies Q * tau."""
        d = np.concatenate([
            np.zeros(3),
            np.full(3, self.accel_noise_density**2),
            np.full(3, self.gyro_noise_density**2),
            np.full(3, self.accel_bias_rw**2),
            np.full(3, self.gyro_bias_rw**2),
        ])
        return np.diag(d)


def ensure_covariance(p: np.ndarray) -> np.ndarray:
    """Re-symmetrize and verify positive semi-definiteness (clip tiny negatives)."""
    p = 0.5 * (p + p.T)
    eigval, eigvec = np.linalg.eigh(p)
    scale = max(float(eigval[-1]), 1e-300)
    if eigval[0] < -1e-9 * scale:
        raise CovarianceNotPSD(f"min eigenvalue {eigval[0]:.3e} of scale {scale:.3e}")
    if eigval[0] < 0.0:
        eigval = np.clip(eigval, 0.0, None)
        p = (eigvec * eigval) @ eigvec.T
        p = 0.5 * (p + p.T)
    return p


def system_matrix(state: NavState, f_ib_n: np.ndarray) -> np.ndarray:
    """Continuous-time error dynamics F (15x15) at the given solution.

    Blocks (rows <- columns):
      pos  <- pos   transport-rate coupling (curvature radii via omega_en)
      pos  <- vel   +/-1 (height row integrates -down velocity)
      vel  <- pos   gravity gradient on the height channel
      vel  <- vel   -(Omega_en + 2 Omega_ie)
      vel  <- att   -skew(f_ib_n)
      vel  <- ba    +C_b_n
      att  <- att   -(Omega_ie + Omega_en)
      att  <- bg    +C_b_n
      bias rows     zero (random-constant model; process noise adds the walk)
    """
    lat, h = state.pos.lat, state.pos.height
    omega_ie = geodesy.earth_rate_nav(lat)
    omega_en = geodesy.transport_rate(state.v_eb_n, state.pos)
    c = state.c_b_n

    f = np.zeros((15, 15))
    f[POS, POS] = -_S_HEIGHT @ geodesy.skew(omega_en) @ _S_HEIGHT
    f[POS, VEL] = _S_HEIGHT
    f[VEL, VEL] = -geodesy.skew(omega_en + 2.0 * omega_ie)
    f[VEL, ATT] = -geodesy.skew(f_ib_n)
    f[VEL, BA] = c
    f[ATT, ATT] = -geodesy.skew(omega_ie + omega_en)
    f[ATT, BG] = c
    # down-gravity decreases ~ 2g/r per meter of height
    r_geo = geodesy.normal_radius(lat) * math.sqrt(
        math.cos(lat)**2 + (1.0 - geodesy.ECCENTRICITY**2)**2 * math.sin(lat)**2)
    g_down = geodesy.gravity_ned(state.pos)[2]
    f[5, 2] = -2.0 * g_down / (r_geo + h)
    return f


def predict(x: ErrorState15, p: np.ndarray, f: np.ndarray, q: np.ndarray,
            tau: float) -> tuple[ErrorState15, np.ndarray]:
    """First-order discrete propagation: Phi = I + F tau."""
    phi = np.eye(15) + f * tau
    x_new = ErrorState15(phi @ x.x)
    p_new = ensure_covariance(phi @ p @ phi.T + q * tau)
    return x_new, p_new


def innovation_vector(nav: NavState, meas: AidingMeasurement) -> np.ndarray:
    """Measurement-minus-solution, position part in local-tangent meters."""
    rn = geodesy.meridian_radius(nav.pos.lat) + nav.pos.height
    re = geodesy.normal_radius(nav.pos.lat) + nav.pos.height
    dpos = np.array([
        (meas.pos.lat - nav.pos.lat) * rn,
        (meas.pos.lon - nav.pos.lon) * re * math.cos(nav.pos.lat),
        meas.pos.height - nav.pos.height,
    ])
    return np.concatenate([dpos, meas.v_eb_n - nav.v_eb_n])


def measurement_matrix() -> np.ndarray:
    """H for position+velocity aiding of the error state (innovation = meas - nav)."""
    h = np.zeros((6, 15))
    h[0:3, POS] = -np.eye(3)
    h[3:6, VEL] = -np.eye(3)
    return h


def gain_update(x: np.ndarray, p: np.ndarray, h: np.ndarray, r: np.ndarray,
                residual: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Standard Kalman gain step with Joseph-form covariance update."""
    s = h @ p @ h.T + r
    k = p @ h.T @ np.linalg.inv(s)
    x_new = x + k @ residual
    ikh = np.eye(p.shape[0]) - k @ h
    p_new = ikh @ p @ ikh.T + k @ r @ k.T
    return x_new, p_new


def update(x: ErrorState15, p: np.ndarray, meas: AidingMeasurement,
           nav: NavState, gate_chi2: float = 22.46,
           time_align_tol: float = 0.005) -> tuple[ErrorState15, np.ndarray]:
    """Measurement update; raises InnovationGateExceeded on gate rejection."""
    if abs(meas.timestamp - nav.timestamp) > time_align_tol:
        raise ValueError(
            f"measurement at {meas.timestamp} not aligned to solution at {nav.timestamp}")
    h = measurement_matrix()
    r = np.diag(np.concatenate([meas.pos_std**2, meas.vel_std**2]))
    z = innovation_vector(nav, meas)
    residual = z - h @ x.x
    s = h @ p @ h.T + r
    d2 = float(residual @ np.linalg.solve(s, residual))
    if d2 > gate_chi2:
        raise InnovationGateExceeded(f"chi-square {d2:.2f} > {gate_chi2:.2f}")
    x_new, p_new = gain_update(x.x, p, h, r, residual)
    return ErrorState15(x_new), ensure_covariance(p_new)


def correct_output(nav: NavState, x: ErrorState15) -> NavState:
    """Corrected solution = mechanized solution minus estimated errors.

    The mechanization state is left untouched (open-loop contract); a new
    NavState is returned.
    """
    rn = geodesy.meridian_radius(nav.pos.lat) + nav.pos.height
    re = geodesy.normal_radius(nav.pos.lat) + nav.pos.height
    dn, de, dh = x.pos_err
    pos = GeodeticPosition(
        nav.pos.lat - dn / rn,
        nav.pos.lon - de / (re * math.cos(nav.pos.lat)),
        nav.pos.height - dh,
    )
    v = nav.v_eb_n - x.vel_err
    c = geodesy.orthonormalize(
        (np.eye(3) - geodesy.skew(x.att_err)) @ nav.c_b_n)
    return NavState(pos, v, c, nav.timestamp)


@dataclass
class IntegrationResult:
    """Output of :func:`run_integration`: corrected and raw pose streams plus
    filter diagnostics."""

    poses: PoseTrajectory
    raw_poses: PoseTrajectory
    corrected_states: list
    raw_states: list
    innovations: np.ndarray        # (K, 6) accepted-measurement residuals
    innovation_times: np.ndarray
    rejected: int
    final_x: ErrorState15
    final_p: np.ndarray


def run_integration(initial: NavState, imu_stream, aiding_stream,
                    config: KalmanConfig | None = None) -> IntegrationResult:
    """Mechanize the IMU stream and refine it with aiding fixes, open loop.

    Corrected states are emitted at every IMU timestamp. Aiding measurements
    are consumed in time order when they align (within the configured
    tolerance) with the mechanized timestamp; gated measurements are counted
    and skipped. With an empty aiding stream the corrected output equals the
    pure mechanization.
    """
    if config is None:
        config = KalmanConfig()
    imu_stream = list(imu_stream)
    if not imu_stream:
        raise EmptyStream("no IMU samples")
    aiding = sorted(aiding_stream, key=lambda m: m.timestamp)

    x = ErrorState15.zero()
    p = config.initial_covariance()
    q = config.process_noise()

    nav = initial.copy()
    raw_states = []
    corrected_states = []
    innovations = []
    innovation_times = []
    rejected = 0
    ai = 0
    # drop aiding that precedes the usable span
    while ai < len(aiding) and aiding[ai].timestamp < initial.timestamp - config.time_align_tol:
        ai += 1

    prev_t = initial.timestamp
    for imu in imu_stream:
        if imu.timestamp <= prev_t:
            raise NonMonotonicTime(f"IMU timestamp {imu.timestamp} <= {prev_t}")
        tau = imu.timestamp - prev_t
        f_ib_n = nav.c_b_n @ imu.f_ib_b
        f_mat = system_matrix(nav, f_ib_n)
        nav = mechanize(nav, imu)
        x, p = predict(x, p, f_mat, q, tau)

        while ai < len(aiding) and aiding[ai].timestamp <= nav.timestamp + config.time_align_tol:
            meas = aiding[ai]
            ai += 1
            if abs(meas.timestamp - nav.timestamp) > config.time_align_tol:
                continue  # no mechanized epoch close enough
            h = measurement_matrix()
            residual = innovation_vector(nav, meas) - h @ x.x
            try:
                x, p = update(x, p, meas, nav, gate_chi2=config.gate_chi2,
                              time_align_tol=config.time_align_tol)
            except InnovationGateExceeded:
                rejected += 1
                continue
            innovations.append(residual)
            innovation_times.append(meas.timestamp)

        raw_states.append(nav.copy())
        corrected_states.append(correct_output(nav, x))
        prev_t = imu.timestamp

    origin = corrected_states[0].pos
    poses = PoseTrajectory.from_nav_states(corrected_states, origin=origin)
    raw_poses = PoseTrajectory.from_nav_states(raw_states, origin=origin)
    return IntegrationResult(
        poses=poses,
        raw_poses=raw_poses,
        corrected_states=corrected_states,
        raw_states=raw_states,
        innovations=np.array(innovations) if innovations else np.zeros((0, 6)),
        innovation_times=np.array(innovation_times),
        rejected=rejected,
        final_x=x,
        final_p=p,
    )
