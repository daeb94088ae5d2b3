"""Strapdown inertial navigation updates in the local (NED) navigation frame.

Sign convention for specific force: the accelerometer measures the reaction
to gravity, so a level stationary unit reads approximately +g along body z
pointing up, i.e. f_ib_b = -C_b_n^T g_n. The stationary test in the suite is
the executable form of this statement.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geodesy
from .errors import LatitudeNearPole, NonMonotonicTime, StepTooLarge
from .geodesy import GeodeticPosition

MAX_STEP_ROTATION = 0.1  # [rad] first-order attitude update validity bound


@dataclass
class ImuSample:
    """One IMU sample: specific force [m/s^2] and angular rate [rad/s], body frame."""

    f_ib_b: np.ndarray
    omega_ib_b: np.ndarray
    timestamp: float

    def __post_init__(self):
        self.f_ib_b = np.asarray(self.f_ib_b, dtype=float)
        self.omega_ib_b = np.asarray(self.omega_ib_b, dtype=float)


@dataclass
class NavState:
    """Navigation solution: geodetic position, NED velocity, body-to-NED attitude."""

    pos: GeodeticPosition
    v_eb_n: np.ndarray
    c_b_n: np.ndarray
    timestamp: float

    def __post_init__(self):
        self.v_eb_n = np.asarray(self.v_eb_n, dtype=float)
        self.c_b_n = np.asarray(self.c_b_n, dtype=float)

    def copy(self) -> "NavState":
        return NavState(self.pos, self.v_eb_n.copy(), self.c_b_n.copy(),
                        self.timestamp)


def attitude_update(state: NavState, imu: ImuSample, tau: float,
                    omega_ie_n: np.ndarray | None = None,
                    omega_en_n: np.ndarray | None = None) -> np.ndarray:
    """First-order attitude update, re-orthonormalized.

    C(+) = C(-)(I + Omega_ib^b tau) - (Omega_ie^n + Omega_en^n) C(-) tau

    The earth-rate and transport-rate vectors default to values computed from
    ``state``; tests may inject explicit (e.g. zero) values.
    """
    omega = imu.omega_ib_b
    if float(np.linalg.norm(omega)) * tau >= MAX_STEP_ROTATION:
        raise StepTooLarge(
            f"rotation {np.linalg.norm(omega) * tau:.3g} rad in one step")
    if omega_ie_n is None:
        omega_ie_n = geodesy.earth_rate_nav(state.pos.lat)
    if omega_en_n is None:
        omega_en_n = geodesy.transport_rate(state.v_eb_n, state.pos)
    c = state.c_b_n
    c_new = (c @ (np.eye(3) + geodesy.skew(omega) * tau)
             - (geodesy.skew(omega_ie_n) + geodesy.skew(omega_en_n)) @ c * tau)
    return geodesy.orthonormalize(c_new)


def velocity_update(state: NavState, f_ib_n: np.ndarray, tau: float,
                    gravity_n: np.ndarray | None = None) -> np.ndarray:
    """Velocity update with gravity, Coriolis and transport-rate terms.

    v(+) = v(-) + [f_ib^n + g_b^n - (Omega_en^n + 2 Omega_ie^n) v(-)] tau
    """
    if gravity_n is None:
        gravity_n = geodesy.gravity_ned(state.pos)
    omega_ie_n = geodesy.earth_rate_nav(state.pos.lat)
    omega_en_n = geodesy.transport_rate(state.v_eb_n, state.pos)
    v = state.v_eb_n
    coriolis = np.cross(omega_en_n + 2.0 * omega_ie_n, v)
    return v + (f_ib_n + gravity_n - coriolis) * tau


def position_update(state: NavState, v_new: np.ndarray, tau: float) -> GeodeticPosition:
    """Trapezoidal geodetic position update.

    Height first, then latitude using the updated height, then longitude
    using the updated latitude and height (each with its curvature radius).
    """
    pos = state.pos
    v_old = state.v_eb_n
    h_new = pos.height - 0.5 * tau * (v_old[2] + v_new[2])
    rn = geodesy.meridian_radius(pos.lat)
    lat_new = pos.lat + 0.5 * tau * (v_old[0] / (rn + pos.height)
                                     + v_new[0] / (rn + h_new))
    re_old = geodesy.normal_radius(pos.lat)
    re_new = geodesy.normal_radius(lat_new)
    if max(abs(pos.lat), abs(lat_new)) > np.pi / 2 - geodesy.POLE_GUARD:
        raise LatitudeNearPole("position update within pole guard")
    lon_new = pos.lon + 0.5 * tau * (
        v_old[1] / ((re_old + pos.height) * np.cos(pos.lat))
        + v_new[1] / ((re_new + h_new) * np.cos(lat_new)))
    return GeodeticPosition(lat_new, lon_new, h_new)


def mechanize(state: NavState, imu: ImuSample) -> NavState:
    """One full mechanization step: attitude, velocity, position, in that order.

    The step length is taken from the timestamps; the velocity update
    transforms specific force with the pre-update attitude C(-).
    """
    tau = imu.timestamp - state.timestamp
    if tau <= 0.0:
        raise NonMonotonicTime(
            f"IMU timestamp {imu.timestamp} not after state {state.timestamp}")
    c_new = attitude_update(state, imu, tau)
    f_ib_n = state.c_b_n @ imu.f_ib_b
    v_new = velocity_update(state, f_ib_n, tau)
    pos_new = position_update(state, v_new, tau)
    return NavState(pos_new, v_new, c_new, imu.timestamp)


def stationary_specific_force(c_b_n: np.ndarray, pos: GeodeticPosition) -> np.ndarray:
    """Body-frame specific force that exactly holds velocity at zero."""
    return c_b_n.T @ (-geodesy.gravity_ned(pos))


def stationary_angular_rate(c_b_n: np.ndarray, pos: GeodeticPosition) -> np.ndarray:
    """Body-frame angular rate that exactly holds attitude (earth-rate compensation)."""
    return c_b_n.T @ geodesy.earth_rate_nav(pos.lat)
