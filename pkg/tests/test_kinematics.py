import numpy as np
import pytest

from cpgrl.kinematics import (
    LEG_INDEX,
    LegGeometry,
    Unreachable,
    forward_kinematics,
    forward_kinematics_all,
    inverse_kinematics,
    leg_jacobian,
    leg_jacobian_all,
    standing_pose,
)

GEOM = LegGeometry(hip_mounts=np.zeros((4, 3)))  # mounts at origin for hand checks
GO1 = LegGeometry()
FR = LEG_INDEX["FR"]
FL = LEG_INDEX["FL"]


def random_reachable_joints(rng, n, below_axis=False):
    """Joint samples away from the full-extension singularity.

    With below_axis=True, keeps only configurations whose foot lies clearly
    below the abduction axis: the domain on which IK's branch choice is
    unique, so the angle round trip is exact.
    """
    out = []
    while len(out) < n:
        q = np.array(
            [rng.uniform(-0.7, 0.7), rng.uniform(-0.6, 1.2), rng.uniform(-2.4, -0.3)]
        )
        if below_axis:
            t, c = GO1.thigh_len, GO1.calf_len
            z = -t * np.cos(q[1]) - c * np.cos(q[1] + q[2])
            if z > -0.02:
                continue
        out.append(q)
    return np.array(out)


def test_fk_zero_pose_points_straight_down():
    foot = forward_kinematics(np.zeros(3), GEOM, FR)
    np.testing.assert_allclose(foot, [0.0, -0.08, -0.426], atol=1e-15)


def test_fk_right_angle_knee():
    foot = forward_kinematics(np.array([0.0, 0.0, -np.pi / 2]), GEOM, FR)
    np.testing.assert_allclose(foot, [0.213, -0.08, -0.213], atol=1e-12)


def test_fk_abduction_matches_rotation_matrix_oracle():
    # independent homogeneous-transform chain: Rot_x(q_abd) applied to the
    # (y_offset, sagittal) assembly
    rng = np.random.default_rng(3)
    for _ in range(50):
        q = random_reachable_joints(rng, 1)[0]
        t, c = GEOM.thigh_len, GEOM.calf_len
        x = -t * np.sin(q[1]) - c * np.sin(q[1] + q[2])
        z = -t * np.cos(q[1]) - c * np.cos(q[1] + q[2])
        local = np.array([x, -0.08, z])
        ca, sa = np.cos(q[0]), np.sin(q[0])
        rot_x = np.array([[1, 0, 0], [0, ca, -sa], [0, sa, ca]])
        np.testing.assert_allclose(
            forward_kinematics(q, GEOM, FR), rot_x @ local, atol=1e-12
        )


def test_fk_all_matches_per_leg():
    rng = np.random.default_rng(4)
    q12 = random_reachable_joints(rng, 4).reshape(12)
    feet = forward_kinematics_all(q12, GO1)
    for leg in range(4):
        np.testing.assert_array_equal(
            feet[leg], forward_kinematics(q12[3 * leg : 3 * leg + 3], GO1, leg)
        )


def test_jacobian_matches_finite_differences():
    rng = np.random.default_rng(5)
    h = 1e-6
    qs = random_reachable_joints(rng, 100)
    for q in qs:
        jac = leg_jacobian(q, GO1, FR)
        fd = np.zeros((3, 3))
        for j in range(3):
            dq = np.zeros(3)
            dq[j] = h
            fd[:, j] = (
                forward_kinematics(q + dq, GO1, FR) - forward_kinematics(q - dq, GO1, FR)
            ) / (2 * h)
        np.testing.assert_allclose(jac, fd, rtol=1e-5, atol=1e-8)


def test_jacobian_specific_point():
    q = np.array([0.1, 0.4, -0.8])
    jac = leg_jacobian(q, GO1, FR)
    h = 1e-6
    fd = np.zeros((3, 3))
    for j in range(3):
        dq = np.zeros(3)
        dq[j] = h
        fd[:, j] = (
            forward_kinematics(q + dq, GO1, FR) - forward_kinematics(q - dq, GO1, FR)
        ) / (2 * h)
    np.testing.assert_allclose(jac, fd, rtol=1e-5, atol=1e-9)


def test_jacobian_singular_at_full_extension():
    jac = leg_jacobian(np.array([0.2, 0.3, 0.0]), GO1, FR)
    scale = GO1.max_reach**3
    assert abs(np.linalg.det(jac)) < 1e-9 * scale


def test_jacobian_abduction_column_has_zero_x():
    rng = np.random.default_rng(6)
    for q in random_reachable_joints(rng, 20):
        jac = leg_jacobian(q, GO1, FR)
        assert jac[0, 0] == 0.0


def test_jacobian_all_matches_per_leg():
    rng = np.random.default_rng(7)
    q12 = random_reachable_joints(rng, 4).reshape(12)
    jacs = leg_jacobian_all(q12, GO1)
    for leg in range(4):
        np.testing.assert_array_equal(
            jacs[leg], leg_jacobian(q12[3 * leg : 3 * leg + 3], GO1, leg)
        )


def test_ik_round_trip_specific():
    q = np.array([0.3, 0.5, -1.0])
    p = forward_kinematics(q, GO1, FR)
    q_back = inverse_kinematics(p, GO1, FR)
    np.testing.assert_allclose(q_back, q, atol=1e-9)


def test_fk_ik_round_trip_random_points():
    rng = np.random.default_rng(8)
    n = 10000
    qs = random_reachable_joints(rng, n, below_axis=True)
    legs = rng.integers(0, 4, n)
    for q, leg in zip(qs, legs):
        p = forward_kinematics(q, GO1, int(leg))
        q_back = inverse_kinematics(p, GO1, int(leg))
        p_back = forward_kinematics(q_back, GO1, int(leg))
        assert np.max(np.abs(p_back - p)) <= 1e-9
        # same branch (knee backward, foot below axis) recovers the same angles
        np.testing.assert_allclose(q_back, q, atol=1e-7)


def test_ik_full_extension_boundary():
    # foot exactly at max reach straight down
    p = GO1.hip_mounts[FR] + np.array([0.0, -0.08, -GO1.max_reach])
    q = inverse_kinematics(p, GO1, FR)
    assert q[2] == pytest.approx(0.0, abs=1e-6)


def test_ik_unreachable_too_far():
    p = GO1.hip_mounts[FR] + np.array([0.5, -0.08, 0.0])
    with pytest.raises(Unreachable):
        inverse_kinematics(p, GO1, FR)


def test_ik_unreachable_inside_hip_cylinder():
    p = GO1.hip_mounts[FR] + np.array([0.0, -0.01, 0.0])
    with pytest.raises(Unreachable):
        inverse_kinematics(p, GO1, FR)


def test_mirror_symmetry():
    rng = np.random.default_rng(9)
    for q in random_reachable_joints(rng, 30):
        q_mirror = q * np.array([-1.0, 1.0, 1.0])
        p_fr = forward_kinematics(q, GEOM, FR)
        p_fl = forward_kinematics(q_mirror, GEOM, FL)
        np.testing.assert_allclose(p_fl, p_fr * np.array([1.0, -1.0, 1.0]), atol=1e-12)


def test_standing_pose_height():
    q = standing_pose(GO1, 0.32)
    feet = forward_kinematics_all(q, GO1)
    np.testing.assert_allclose(feet[:, 2], -0.32, atol=1e-12)
    # feet directly below hips (x of mount, y of mount + lateral offset)
    np.testing.assert_allclose(feet[:, 0], GO1.hip_mounts[:, 0], atol=1e-12)


def test_geometry_validation():
    with pytest.raises(ValueError):
        LegGeometry(thigh_len=-0.1)
