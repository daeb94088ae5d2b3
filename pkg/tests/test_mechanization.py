import math

import numpy as np
import pytest

from navadi import geodesy
from navadi.errors import LatitudeNearPole, NonMonotonicTime, StepTooLarge
from navadi.geodesy import GeodeticPosition
from navadi.mechanization import (ImuSample, NavState, attitude_update,
                                  mechanize, position_update,
                                  stationary_angular_rate,
                                  stationary_specific_force, velocity_update)
from navadi.trajectory import local_tangent_offset

# frozen from an independent 50-digit evaluation (see test_geodesy for radii)
CORIOLIS_CASE_V_PLUS = (10.0, 1.0956846223059211e-4, -1.569484956431125e-6)
TRAPEZOID_DLAT = 1.569484956431125e-7


def _state(lat=0.85, lon=0.1, h=100.0, v=(0.0, 0.0, 0.0), c=None, t=0.0):
    if c is None:
        c = np.eye(3)
    return NavState(GeodeticPosition(lat, lon, h), np.array(v, float), c, t)


# --- attitude ----------------------------------------------------------------

def test_attitude_compensated_gyro_leaves_attitude():
    rng = np.random.default_rng(11)
    for _ in range(10):
        c = geodesy.euler_to_matrix(*rng.uniform(-1.0, 1.0, 3))
        state = _state(c=c)
        omega = c.T @ (geodesy.earth_rate_nav(state.pos.lat)
                       + geodesy.transport_rate(state.v_eb_n, state.pos))
        c_new = attitude_update(state, ImuSample(np.zeros(3), omega, 0.01), 0.01)
        assert np.abs(c_new - c).max() < 1e-9


def test_attitude_zero_rates_zero_gyro_exact():
    state = _state(c=np.eye(3))
    imu = ImuSample(np.zeros(3), np.zeros(3), 0.01)
    c_new = attitude_update(state, imu, 0.01,
                            omega_ie_n=np.zeros(3), omega_en_n=np.zeros(3))
    assert np.array_equal(c_new, np.eye(3))


def test_attitude_first_order_yaw_step():
    state = _state(c=np.eye(3))
    imu = ImuSample(np.zeros(3), np.array([0.0, 0.0, 0.01]), 0.01)
    c_new = attitude_update(state, imu, 0.01,
                            omega_ie_n=np.zeros(3), omega_en_n=np.zeros(3))
    expected = np.eye(3) + 1e-4 * geodesy.skew([0.0, 0.0, 1.0])
    assert np.abs(c_new - expected).max() < 1e-8


def test_attitude_step_too_large():
    state = _state()
    imu = ImuSample(np.zeros(3), np.array([0.0, 0.0, 20.0]), 0.01)
    with pytest.raises(StepTooLarge):
        attitude_update(state, imu, 0.01)


def test_attitude_output_orthonormal():
    state = _state(c=geodesy.euler_to_matrix(0.3, 0.2, -1.0))
    imu = ImuSample(np.zeros(3), np.array([0.05, -0.02, 0.04]), 0.02)
    c_new = attitude_update(state, imu, 0.02)
    assert np.abs(c_new.T @ c_new - np.eye(3)).max() < 1e-12


# --- velocity ----------------------------------------------------------------

def test_velocity_stationary_force_balance():
    state = _state(v=(0.0, 0.0, 0.0))
    f_n = -geodesy.gravity_ned(state.pos)
    v_new = velocity_update(state, f_n, 0.01)
    assert np.array_equal(v_new, np.zeros(3))


def test_velocity_free_fall():
    state = _state(v=(0.0, 0.0, 0.0))
    v_new = velocity_update(state, np.zeros(3), 0.1,
                            gravity_n=np.array([0.0, 0.0, 9.80]))
    assert np.allclose(v_new, [0.0, 0.0, 0.98], atol=0)


def test_velocity_coriolis_deflection_frozen():
    state = _state(lat=0.85, h=0.0, v=(10.0, 0.0, 0.0))
    f_n = -geodesy.gravity_ned(state.pos)
    v_new = velocity_update(state, f_n, 0.1)
    assert np.allclose(v_new, CORIOLIS_CASE_V_PLUS, rtol=1e-12, atol=1e-18)


# --- position ----------------------------------------------------------------

def test_position_zero_velocity_unchanged():
    state = _state()
    pos = position_update(state, np.zeros(3), 1.0)
    assert pos == state.pos


def test_position_down_velocity_sign():
    state = _state(h=100.0, v=(0.0, 0.0, -1.0))
    pos = position_update(state, np.array([0.0, 0.0, -1.0]), 1.0)
    assert math.isclose(pos.height, 101.0, abs_tol=0)
    assert pos.lat == state.pos.lat
    assert pos.lon == state.pos.lon


def test_position_trapezoid_frozen_dlat():
    state = _state(lat=0.85, h=0.0, v=(10.0, 0.0, 0.0))
    pos = position_update(state, np.array([10.0, 0.0, 0.0]), 0.1)
    assert math.isclose(pos.lat - 0.85, TRAPEZOID_DLAT, rel_tol=1e-10)


def test_position_swap_symmetry():
    # swapping old/new velocities changes the increment only at float level
    v_a = np.array([10.0, -4.0, 1.5])
    v_b = np.array([6.0, 3.0, -0.5])
    s1 = _state(v=v_a)
    s2 = _state(v=v_b)
    p1 = position_update(s1, v_b, 0.1)
    p2 = position_update(s2, v_a, 0.1)
    assert abs(p1.lat - p2.lat) < 1e-12
    assert abs(p1.lon - p2.lon) < 1e-12
    assert abs(p1.height - p2.height) < 1e-12


def test_position_pole_guard():
    state = _state(lat=math.pi / 2 - 1e-8, v=(10.0, 0.0, 0.0))
    with pytest.raises(LatitudeNearPole):
        position_update(state, np.array([10.0, 0.0, 0.0]), 1.0)


# --- full mechanization --------------------------------------------------------

def test_mechanize_rejects_non_monotonic_time():
    state = _state(t=1.0)
    with pytest.raises(NonMonotonicTime):
        mechanize(state, ImuSample(np.zeros(3), np.zeros(3), 1.0))


def test_mechanize_stationary_invariance():
    # 10 s at 100 Hz with exactly compensating inputs: < 1 mm, < 1e-4 m/s
    pos0 = GeodeticPosition(0.85, 0.1, 100.0)
    c0 = geodesy.euler_to_matrix(0.05, -0.03, 0.7)
    state = NavState(pos0, np.zeros(3), c0, 0.0)
    f = stationary_specific_force(c0, pos0)
    w = stationary_angular_rate(c0, pos0)
    for k in range(1000):
        state = mechanize(state, ImuSample(f, w, (k + 1) * 0.01))
    offset = local_tangent_offset(state.pos, pos0)
    assert np.linalg.norm(offset) < 1e-3
    assert np.linalg.norm(state.v_eb_n) < 1e-4
    assert np.abs(state.c_b_n - c0).max() < 1e-6


def test_mechanize_deterministic():
    def run():
        state = _state(v=(1.0, 0.5, 0.0))
        for k in range(50):
            imu = ImuSample(np.array([0.1, 0.0, -9.8]),
                            np.array([0.0, 0.0, 0.01]), (k + 1) * 0.01)
            state = mechanize(state, imu)
        return state
    a, b = run(), run()
    assert a.pos == b.pos
    assert np.array_equal(a.v_eb_n, b.v_eb_n)
    assert np.array_equal(a.c_b_n, b.c_b_n)


def test_mechanize_constant_acceleration_closed_form():
    # north acceleration at the equator: Coriolis vanishes, displacement ~ a t^2 / 2
    accel = 1.0
    tau = 0.01
    n = 500  # 5 s
    pos0 = GeodeticPosition(0.0, 0.0, 0.0)
    state = NavState(pos0, np.zeros(3), np.eye(3), 0.0)
    for k in range(n):
        # required specific force from the current solution: f_n = a_n - g + coriolis
        omega_ie = geodesy.earth_rate_nav(state.pos.lat)
        omega_en = geodesy.transport_rate(state.v_eb_n, state.pos)
        f_n = (np.array([accel, 0.0, 0.0]) - geodesy.gravity_ned(state.pos)
               + np.cross(omega_en + 2.0 * omega_ie, state.v_eb_n))
        f_b = state.c_b_n.T @ f_n
        w_b = stationary_angular_rate(state.c_b_n, state.pos)
        state = mechanize(state, ImuSample(f_b, w_b, (k + 1) * tau))
    t_total = n * tau
    expected_north = 0.5 * accel * t_total**2
    got_north = local_tangent_offset(state.pos, pos0)[0]
    assert abs(got_north - expected_north) / expected_north < 1e-3
    assert abs(state.v_eb_n[0] - accel * t_total) / (accel * t_total) < 1e-3


def test_attitude_orthonormal_over_many_steps():
    # sustained yaw rotation for 1e5 steps keeps C orthonormal to < 1e-9
    pos0 = GeodeticPosition(0.6, 0.0, 50.0)
    c = geodesy.euler_to_matrix(0.1, -0.05, 0.3)
    state = NavState(pos0, np.zeros(3), c, 0.0)
    spin = np.array([0.0, 0.0, 0.05])
    imu = ImuSample(np.zeros(3), spin, 0.0)
    tau = 0.01
    worst = 0.0
    for k in range(100_000):
        imu.omega_ib_b = state.c_b_n.T @ geodesy.earth_rate_nav(pos0.lat) + spin
        state.c_b_n = attitude_update(state, imu, tau)
        if k % 5000 == 0:
            worst = max(worst, np.abs(state.c_b_n.T @ state.c_b_n - np.eye(3)).max())
    worst = max(worst, np.abs(state.c_b_n.T @ state.c_b_n - np.eye(3)).max())
    assert worst < 1e-9
