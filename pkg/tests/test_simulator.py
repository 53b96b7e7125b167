import numpy as np
import pytest
from dataclasses import replace

from cpgrl import quat
from cpgrl.kinematics import forward_kinematics_all, leg_jacobian_all
from cpgrl.simulator import (
    EnvParams,
    NumericalDivergence,
    Termination,
    apply_impulse,
    check_termination,
    contact_force,
    low_pass,
    pd_torque,
    spawn_state,
    step_physics,
    trunk_clearance,
)

PARAMS = EnvParams()


def settle(params, seconds, drop=0.02):
    s = spawn_state(params, drop_height=drop)
    for _ in range(int(round(seconds / params.dt))):
        s = step_physics(s, params.nominal_q, params)
    return s


# ---------------------------------------------------------------- low_pass

def test_low_pass_single_step():
    out = low_pass(np.ones(12), np.zeros(12), 0.7)
    np.testing.assert_allclose(out, 0.7)


def test_low_pass_geometric_convergence():
    s = np.zeros(12)
    c = np.full(12, 1.3)
    for _ in range(50):
        s = low_pass(c, s, 0.7)
    # exact bound 0.3**50 is below machine epsilon; converged means ulp-level
    assert np.all(np.abs(s - c) < 1e-15)


def test_low_pass_alpha_one_bypasses():
    q = np.arange(12.0)
    np.testing.assert_array_equal(low_pass(q, np.zeros(12), 1.0), q)


def test_low_pass_rejects_bad_alpha():
    with pytest.raises(ValueError):
        low_pass(np.zeros(12), np.zeros(12), 0.0)


# ---------------------------------------------------------------- pd_torque

def test_pd_torque_proportional():
    tau = pd_torque(np.full(12, 0.5), np.full(12, 0.4), np.zeros(12), 75.0, 1.5, 23.7)
    np.testing.assert_allclose(tau, 7.5)


def test_pd_torque_derivative():
    tau = pd_torque(np.full(12, 0.5), np.full(12, 0.4), np.ones(12), 75.0, 1.5, 23.7)
    np.testing.assert_allclose(tau, 6.0)


def test_pd_torque_clamps():
    tau = pd_torque(np.full(12, 1.0), np.zeros(12), np.zeros(12), 75.0, 1.5, 23.7)
    np.testing.assert_allclose(tau, 23.7)


# ---------------------------------------------------------------- contact

def test_no_force_above_surface():
    f = contact_force(np.array([0.0, 0.0, 0.01]), np.zeros(3), PARAMS)
    np.testing.assert_array_equal(f, np.zeros(3))


def test_normal_spring_force():
    p = replace(PARAMS, contact_stiffness=3.0e4)
    f = contact_force(np.array([0.0, 0.0, -0.001]), np.zeros(3), p)
    np.testing.assert_allclose(f, [0.0, 0.0, 30.0])


def test_coulomb_saturation():
    # large tangential speed: force = mu * N opposing motion
    p = replace(PARAMS, friction=0.8)
    pen = 30.0 / p.contact_stiffness
    f = contact_force(np.array([0.0, 0.0, -pen]), np.array([5.0, 0.0, 0.0]), p)
    assert f[2] == pytest.approx(30.0)
    assert f[0] == pytest.approx(-24.0)
    assert f[1] == 0.0


def test_viscous_regime_below_cone():
    p = replace(PARAMS, friction=0.8)
    pen = 30.0 / p.contact_stiffness
    v = 0.01
    f = contact_force(np.array([0.0, 0.0, -pen]), np.array([v, 0.0, 0.0]), p)
    assert f[0] == pytest.approx(-p.tangential_gain * v)


def test_contact_force_batched_matches_scalar():
    rng = np.random.default_rng(11)
    pts = rng.uniform(-0.01, 0.01, size=(16, 3))
    vels = rng.uniform(-1, 1, size=(16, 3))
    batched = contact_force(pts, vels, PARAMS)
    for i in range(16):
        np.testing.assert_array_equal(batched[i], contact_force(pts[i], vels[i], PARAMS))


# ---------------------------------------------------------------- stepping

def test_free_fall_velocity_increment_exact():
    s = spawn_state(PARAMS, drop_height=1.0)
    s2 = step_physics(s, s.q, PARAMS)
    dv = s2.trunk.lin_vel[2] - s.trunk.lin_vel[2]
    assert dv == -(PARAMS.gravity * PARAMS.dt)


def test_standing_settles_near_nominal_height():
    s = settle(PARAMS, 1.0)
    # pinned regression: settled height 0.3061 m; spec example tolerance +-0.02
    assert s.trunk.position[2] == pytest.approx(0.3061, abs=2e-3)
    assert abs(s.trunk.position[2] - PARAMS.stand_height) < 0.02
    assert np.linalg.norm(s.trunk.lin_vel) < 0.05


def test_settled_contact_forces_balance_weight():
    s = settle(PARAMS, 3.0)
    feet_b = forward_kinematics_all(s.q, PARAMS.geometry)
    feet_w = s.trunk.position + quat.rotate(s.trunk.orientation, feet_b)
    jac = leg_jacobian_all(s.q, PARAMS.geometry)
    v_b = np.einsum("lij,lj->li", jac, s.qdot.reshape(4, 3))
    v_w = s.trunk.lin_vel + quat.rotate(
        s.trunk.orientation, np.cross(s.trunk.ang_vel, feet_b) + v_b
    )
    f = contact_force(feet_w, v_w, PARAMS)
    total = f[:, 2].sum()
    assert total == pytest.approx(PARAMS.trunk_mass * PARAMS.gravity, rel=0.02)


def test_passive_settle_dissipates_energy():
    s = settle(PARAMS, 3.0, drop=0.05)
    ke = 0.5 * PARAMS.trunk_mass * np.sum(s.trunk.lin_vel**2) + 0.5 * np.sum(
        PARAMS.trunk_inertia * s.trunk.ang_vel**2
    )
    assert ke < 1e-3


def test_determinism_bit_identical():
    s1 = settle(PARAMS, 0.5)
    s2 = settle(PARAMS, 0.5)
    np.testing.assert_array_equal(s1.trunk.position, s2.trunk.position)
    np.testing.assert_array_equal(s1.trunk.orientation, s2.trunk.orientation)
    np.testing.assert_array_equal(s1.q, s2.q)
    np.testing.assert_array_equal(s1.qdot, s2.qdot)


def test_quaternion_norm_preserved():
    s = spawn_state(PARAMS)
    s.trunk.ang_vel = np.array([0.4, -0.2, 0.9])
    for _ in range(200):
        s = step_physics(s, PARAMS.nominal_q, PARAMS)
        assert abs(np.linalg.norm(s.trunk.orientation) - 1.0) < 1e-9


def test_no_contact_force_airborne():
    s = spawn_state(PARAMS, drop_height=0.5)
    s2 = step_physics(s, s.q, PARAMS)
    assert not s2.contacts.any()
    # velocity change is pure gravity
    np.testing.assert_allclose(
        s2.trunk.lin_vel - s.trunk.lin_vel, [0, 0, -PARAMS.gravity * PARAMS.dt]
    )


def test_air_time_accumulates_then_clears():
    s = spawn_state(PARAMS, drop_height=0.3)
    for _ in range(20):
        s = step_physics(s, PARAMS.nominal_q, PARAMS)
    np.testing.assert_allclose(s.air_time, 20 * PARAMS.dt, rtol=1e-12)
    s = settle(PARAMS, 1.0)
    assert np.all(s.air_time[s.contacts] == 0.0)


def test_divergence_detected():
    s = spawn_state(PARAMS)
    s.trunk.lin_vel = np.array([0.0, 0.0, 2.0e6])
    with pytest.raises(NumericalDivergence):
        step_physics(s, PARAMS.nominal_q, PARAMS)


# ---------------------------------------------------------------- impulses

def test_apply_impulse_zero_is_identity():
    s = spawn_state(PARAMS)
    s2 = apply_impulse(s, np.zeros(2))
    np.testing.assert_array_equal(s2.trunk.lin_vel, s.trunk.lin_vel)


def test_apply_impulse_adds_velocity():
    s = spawn_state(PARAMS)
    s2 = apply_impulse(s, np.array([1.8, 0.0]))
    assert s2.trunk.lin_vel[0] - s.trunk.lin_vel[0] == 1.8
    assert s2.trunk.lin_vel[2] == s.trunk.lin_vel[2]


def test_apply_impulse_rejects_over_cap():
    s = spawn_state(PARAMS)
    with pytest.raises(ValueError):
        apply_impulse(s, np.array([2.5, 0.0]), cap=1.8)


# ---------------------------------------------------------------- termination

def test_timeout():
    s = spawn_state(PARAMS)
    s.episode_time = 20.0
    assert check_termination(s, PARAMS) is Termination.TIMEOUT


def test_trunk_collision_when_low():
    s = spawn_state(PARAMS)
    s.trunk.position = np.array([0.0, 0.0, 0.02])
    assert check_termination(s, PARAMS) is Termination.TRUNK_COLLISION


def test_running_when_nominal():
    s = settle(PARAMS, 1.0)
    s.episode_time = 5.0
    assert check_termination(s, PARAMS) is Termination.RUNNING


def test_trunk_clearance_flat():
    s = spawn_state(PARAMS)
    c = trunk_clearance(s.trunk.position, s.trunk.orientation, PARAMS)
    expected = s.trunk.position[2] - PARAMS.trunk_half_extents[2]
    assert c == pytest.approx(expected)


# ---------------------------------------------------------------- slope

def test_slope_terrain_normal():
    p = PARAMS.with_slope(np.radians(10.0))
    assert p.terrain_normal[2] == pytest.approx(np.cos(np.radians(10.0)))
    # a foot below the inclined plane feels a force along the normal
    f = contact_force(np.array([0.1, 0.0, 0.1 * np.tan(np.radians(10.0)) - 0.002]),
                      np.zeros(3), p)
    n = p.terrain_normal
    assert f @ n > 0
    # no tangential component for a static foot
    np.testing.assert_allclose(f - (f @ n) * n, 0.0, atol=1e-12)


def test_params_validation():
    with pytest.raises(ValueError):
        EnvParams(trunk_mass=-1.0)
    with pytest.raises(ValueError):
        EnvParams(friction=-0.1)
