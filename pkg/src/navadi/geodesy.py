"""WGS-84 earth model, frame conventions and rotation utilities.

Local navigation frame is NED: x north, y east, z down. All angles are
radians, all lengths meters, unless a name says otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import GimbalLock, LatitudeNearPole

# WGS-84 ellipsoid
R_0 = 6378137.0                  # equatorial radius [m]
ECCENTRICITY = 0.0818191908425   # first eccentricity
OMEGA_IE = 7.292115e-5           # earth rotation rate [rad/s]
FLATTENING = 1.0 / 298.257223563
GM = 3.986004418e14              # gravitational constant x earth mass [m^3/s^2]

# Somigliana normal-gravity constants (WGS-84)
GAMMA_EQUATOR = 9.7803253359       # normal gravity at the equator [m/s^2]
SOMIGLIANA_K = 0.00193185265241    # (b*gamma_p - a*gamma_e) / (a*gamma_e)
_SEMI_MINOR = R_0 * (1.0 - FLATTENING)
_M_GRAV = OMEGA_IE**2 * R_0**2 * _SEMI_MINOR / GM

POLE_GUARD = 1e-6  # [rad] margin kept from +/-pi/2 for tan-latitude terms


def wrap_longitude(lon: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    wrapped = math.fmod(lon + math.pi, 2.0 * math.pi)
    if wrapped <= 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


@dataclass(frozen=True)
class GeodeticPosition:
    """Geodetic position: latitude [rad], longitude [rad], height [m].

    Longitude is wrapped to (-pi, pi] on construction; latitude must lie in
    [-pi/2, pi/2] and height must be finite.
    """

    lat: float
    lon: float
    height: float

    def __post_init__(self):
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)
                and math.isfinite(self.height)):
            raise ValueError("non-finite geodetic coordinate")
        if abs(self.lat) > math.pi / 2:
            raise ValueError(f"latitude {self.lat} outside [-pi/2, pi/2]")
        object.__setattr__(self, "lon", wrap_longitude(self.lon))


def skew(v) -> np.ndarray:
    """Skew-symmetric matrix M of a 3-vector, with M @ w == cross(v, w)."""
    x, y, z = v
    return np.array([[0.0, -z, y],
                     [z, 0.0, -x],
                     [-y, x, 0.0]])


def unskew(m: np.ndarray) -> np.ndarray:
    """Inverse of :func:`skew` for an (approximately) antisymmetric matrix."""
    a = 0.5 * (m - m.T)
    return np.array([a[2, 1], a[0, 2], a[1, 0]])


def meridian_radius(lat: float) -> float:
    """North-south radius of curvature R_N(L) = R_0(1-e^2)/(1-e^2 sin^2 L)^(3/2)."""
    s2 = math.sin(lat) ** 2
    return R_0 * (1.0 - ECCENTRICITY**2) / (1.0 - ECCENTRICITY**2 * s2) ** 1.5


def normal_radius(lat: float, sqrt_denominator: bool = True) -> float:
    """East-west (prime-vertical) radius of curvature R_E(L).

    Standard geodesy divides by sqrt(1 - e^2 sin^2 L). Some publications
    print the same formula without the square root on the denominator; pass
    ``sqrt_denominator=False`` to evaluate that variant.
    """
    d = 1.0 - ECCENTRICITY**2 * math.sin(lat) ** 2
    if sqrt_denominator:
        d = math.sqrt(d)
    return R_0 / d


def earth_rate_nav(lat: float) -> np.ndarray:
    """Earth rotation rate resolved in NED: omega_ie * (cos L, 0, -sin L) [rad/s]."""
    return OMEGA_IE * np.array([math.cos(lat), 0.0, -math.sin(lat)])


def transport_rate(v_eb_n, pos: GeodeticPosition) -> np.ndarray:
    """Rotation rate of the NED frame w.r.t. the earth frame [rad/s].

    Parameters
    ----------
    v_eb_n : (3,) array
        Earth-referenced velocity in NED [m/s].
    pos : GeodeticPosition
        Current position; latitude must stay POLE_GUARD away from the poles.
    """
    if abs(pos.lat) > math.pi / 2 - POLE_GUARD:
        raise LatitudeNearPole(f"latitude {pos.lat} within pole guard")
    vn, ve, _ = v_eb_n
    re_h = normal_radius(pos.lat) + pos.height
    rn_h = meridian_radius(pos.lat) + pos.height
    return np.array([ve / re_h,
                     -vn / rn_h,
                     -ve * math.tan(pos.lat) / re_h])


def gravity_ned(pos: GeodeticPosition) -> np.ndarray:
    """Acceleration due to gravity in NED [m/s^2], down component positive.

    Somigliana normal gravity on the WGS-84 ellipsoid with the standard
    free-air height corrections (linear and quadratic in height).
    """
    s2 = math.sin(pos.lat) ** 2
    gamma0 = GAMMA_EQUATOR * (1.0 + SOMIGLIANA_K * s2) / math.sqrt(
        1.0 - ECCENTRICITY**2 * s2)
    h = pos.height
    gamma = gamma0 * (1.0
                      - (2.0 / R_0) * (1.0 + FLATTENING + _M_GRAV
                                       - 2.0 * FLATTENING * s2) * h
                      + 3.0 * h**2 / R_0**2)
    return np.array([0.0, 0.0, gamma])


def euler_to_matrix(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Body-to-NED rotation matrix from ZYX (yaw-pitch-roll) intrinsic Euler angles."""
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    return rz @ ry @ rx


def matrix_to_euler(c_b_n: np.ndarray) -> tuple[float, float, float]:
    """Invert :func:`euler_to_matrix`; raises GimbalLock near |pitch| = pi/2."""
    sp = -c_b_n[2, 0]
    if abs(sp) >= 1.0 - 1e-12:
        raise GimbalLock("pitch within 1e-6 rad of +/-pi/2")
    pitch = math.asin(sp)
    roll = math.atan2(c_b_n[2, 1], c_b_n[2, 2])
    yaw = math.atan2(c_b_n[1, 0], c_b_n[0, 0])
    return roll, pitch, yaw


def orthonormalize(c: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix via symmetric (polar/SVD) orthogonalization."""
    u, _, vt = np.linalg.svd(c)
    r = u @ vt
    if np.linalg.det(r) < 0.0:
        u[:, 2] = -u[:, 2]
        r = u @ vt
    return r
