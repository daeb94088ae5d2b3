import math

import numpy as np
import pytest

from navadi import geodesy
from navadi.errors import GimbalLock, LatitudeNearPole
from navadi.geodesy import GeodeticPosition

# frozen from an independent 50-digit evaluation of the standard formulas
R_N_45DEG = 6367381.8156195811
R_E_45DEG = 6388838.2901211161
R_E_45DEG_NO_SQRT = 6399557.5349538128
TRANSPORT_CASE = (1.5651285422753373e-6, -7.8512427517169656e-7,
                  -1.6115166938667179e-6)
GRAVITY_EQUATOR = 9.7803253359
GRAVITY_POLE = 9.832184937858916


def test_skew_definition():
    m = geodesy.skew((1.0, 2.0, 3.0))
    assert np.array_equal(m, np.array([[0, -3, 2], [3, 0, -1], [-2, 1, 0]], float))


def test_skew_zero():
    assert np.array_equal(geodesy.skew(np.zeros(3)), np.zeros((3, 3)))


def test_skew_annihilates_own_vector():
    v = np.array([4.0, -1.0, 2.0])
    assert np.array_equal(geodesy.skew(v) @ v, np.zeros(3))


def test_skew_matches_cross_product():
    rng = np.random.default_rng(1)
    for _ in range(50):
        v, w = rng.normal(size=3), rng.normal(size=3)
        assert np.allclose(geodesy.skew(v) @ w, np.cross(v, w), atol=1e-12)
        assert np.array_equal(geodesy.skew(v), -geodesy.skew(v).T)


def test_unskew_roundtrip():
    v = np.array([0.3, -0.7, 1.1])
    assert np.allclose(geodesy.unskew(geodesy.skew(v)), v, atol=0)


def test_normal_radius_at_equator_is_r0():
    assert geodesy.normal_radius(0.0) == geodesy.R_0


def test_meridian_radius_at_equator():
    expected = geodesy.R_0 * (1.0 - geodesy.ECCENTRICITY**2)
    assert math.isclose(geodesy.meridian_radius(0.0), expected, rel_tol=1e-15)


def test_radii_at_45_degrees():
    assert math.isclose(geodesy.meridian_radius(math.pi / 4), R_N_45DEG, rel_tol=1e-12)
    assert math.isclose(geodesy.normal_radius(math.pi / 4), R_E_45DEG, rel_tol=1e-12)


def test_normal_radius_no_sqrt_variant():
    got = geodesy.normal_radius(math.pi / 4, sqrt_denominator=False)
    assert math.isclose(got, R_E_45DEG_NO_SQRT, rel_tol=1e-12)


def test_normal_radius_dominates_meridian_radius():
    for lat in np.linspace(-math.pi / 2, math.pi / 2, 181):
        assert geodesy.normal_radius(lat) >= geodesy.meridian_radius(lat)


def test_earth_rate_cases():
    w = geodesy.OMEGA_IE
    assert np.allclose(geodesy.earth_rate_nav(0.0), [w, 0.0, 0.0], atol=1e-20)
    assert np.allclose(geodesy.earth_rate_nav(math.pi / 2), [0.0, 0.0, -w], atol=1e-20)
    assert np.allclose(geodesy.earth_rate_nav(math.pi / 4),
                       [w / math.sqrt(2), 0.0, -w / math.sqrt(2)], atol=1e-20)


def test_transport_rate_zero_velocity():
    pos = GeodeticPosition(0.7, 0.1, 50.0)
    assert np.array_equal(geodesy.transport_rate(np.zeros(3), pos), np.zeros(3))


def test_transport_rate_simple_north_motion():
    pos = GeodeticPosition(0.0, 0.0, 0.0)
    got = geodesy.transport_rate(np.array([0.0, 10.0, 0.0]), pos)
    assert math.isclose(got[0], 10.0 / geodesy.R_0, rel_tol=1e-15)
    assert got[1] == 0.0
    assert got[2] == 0.0  # tan(0) = 0


def test_transport_rate_frozen_case():
    pos = GeodeticPosition(0.8, 0.0, 100.0)
    got = geodesy.transport_rate(np.array([5.0, 10.0, 0.0]), pos)
    assert np.allclose(got, TRANSPORT_CASE, rtol=1e-12, atol=0)


def test_transport_rate_pole_guard():
    pos = GeodeticPosition(math.pi / 2 - 1e-9, 0.0, 0.0)
    with pytest.raises(LatitudeNearPole):
        geodesy.transport_rate(np.array([1.0, 1.0, 0.0]), pos)


def test_gravity_equator_and_pole():
    g_eq = geodesy.gravity_ned(GeodeticPosition(0.0, 0.0, 0.0))
    g_po = geodesy.gravity_ned(GeodeticPosition(math.pi / 2, 0.0, 0.0))
    assert g_eq[0] == g_eq[1] == 0.0
    assert math.isclose(g_eq[2], GRAVITY_EQUATOR, abs_tol=1e-3)
    assert math.isclose(g_po[2], GRAVITY_POLE, abs_tol=1e-3)
    # frozen oracle agreement is much tighter than the spec tolerance
    assert math.isclose(g_eq[2], GRAVITY_EQUATOR, rel_tol=1e-12)
    assert math.isclose(g_po[2], GRAVITY_POLE, rel_tol=1e-12)


def test_gravity_decreases_with_height():
    for lat in (0.0, 0.5, 1.0):
        g0 = geodesy.gravity_ned(GeodeticPosition(lat, 0.0, 0.0))[2]
        g1 = geodesy.gravity_ned(GeodeticPosition(lat, 0.0, 500.0))[2]
        g2 = geodesy.gravity_ned(GeodeticPosition(lat, 0.0, 5000.0))[2]
        assert g0 > g1 > g2


def test_gravity_increases_with_latitude():
    downs = [geodesy.gravity_ned(GeodeticPosition(lat, 0.0, 0.0))[2]
             for lat in np.linspace(0.0, math.pi / 2, 30)]
    assert all(b > a for a, b in zip(downs, downs[1:]))


def test_euler_identity():
    assert np.allclose(geodesy.euler_to_matrix(0.0, 0.0, 0.0), np.eye(3), atol=0)


def test_euler_yaw_90_maps_north_axis_to_east():
    c = geodesy.euler_to_matrix(0.0, 0.0, math.pi / 2)
    # body x (north at zero attitude) ends up along NED east
    assert np.allclose(c @ np.array([1.0, 0.0, 0.0]), [0.0, 1.0, 0.0], atol=1e-15)


def test_euler_roundtrip_property():
    rng = np.random.default_rng(7)
    max_pitch = math.radians(80.0)
    for _ in range(1000):
        roll = rng.uniform(-math.pi, math.pi)
        pitch = rng.uniform(-max_pitch, max_pitch)
        yaw = rng.uniform(-math.pi, math.pi)
        r2, p2, y2 = geodesy.matrix_to_euler(geodesy.euler_to_matrix(roll, pitch, yaw))
        assert abs(r2 - roll) < 1e-10
        assert abs(p2 - pitch) < 1e-10
        assert abs(y2 - yaw) < 1e-10


def test_matrix_to_euler_gimbal_lock():
    c = geodesy.euler_to_matrix(0.2, math.pi / 2, -0.4)
    with pytest.raises(GimbalLock):
        geodesy.matrix_to_euler(c)


def test_orthonormalize_recovers_rotation():
    rng = np.random.default_rng(3)
    c = geodesy.euler_to_matrix(0.3, -0.2, 1.0)
    dirty = c + 1e-6 * rng.normal(size=(3, 3))
    clean = geodesy.orthonormalize(dirty)
    assert np.allclose(clean.T @ clean, np.eye(3), atol=1e-12)
    assert math.isclose(np.linalg.det(clean), 1.0, abs_tol=1e-12)
    assert np.allclose(clean, c, atol=1e-5)


def test_geodetic_position_validation():
    with pytest.raises(ValueError):
        GeodeticPosition(2.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        GeodeticPosition(0.0, 0.0, math.nan)
    p = GeodeticPosition(0.1, 4.0, 10.0)  # lon wraps into (-pi, pi]
    assert -math.pi < p.lon <= math.pi
    assert math.isclose(p.lon, 4.0 - 2.0 * math.pi, rel_tol=1e-15)
    assert GeodeticPosition(0.0, math.pi, 0.0).lon == math.pi
