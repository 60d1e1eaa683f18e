import numpy as np
import pytest

from pollisim.geometry import Pose3
from pollisim.kinematics import (
    DhRow,
    IllConditionedError,
    JointLimitError,
    JointState,
    RankDeficientError,
    SerialArmModel,
    condition_check,
    default_arm_model,
    dh_transform,
    forward_kinematics,
    jacobian,
    load_arm_model,
    reduced_pseudoinverse_velocities,
    save_arm_model,
    solve_joint_velocities,
)


def rot_z(t):
    c, s = np.cos(t), np.sin(t)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rot_x(t):
    c, s = np.cos(t), np.sin(t)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def planar_two_link(l1=0.5, l2=0.3):
    rows = [DhRow(a=l1, alpha=0.0, d=0.0), DhRow(a=l2, alpha=0.0, d=0.0)]
    return SerialArmModel(rows, [-np.pi, -np.pi], [np.pi, np.pi])


def generic_config():
    return np.array([0.3, -0.5, 0.7, 0.4, 0.8, -0.2])


def test_dh_transform_matches_composed_elementary_transforms(rng):
    # independent oracle: Rz(theta) Tz(d) Tx(a) Rx(alpha) built from parts
    for _ in range(50):
        row = DhRow(*rng.uniform(-1.0, 1.0, size=4))
        angle = rng.uniform(-np.pi, np.pi)
        T = np.eye(4)
        T[:3, :3] = rot_z(angle + row.theta_offset)
        T[:3, 3] = T[:3, :3] @ np.array([row.a, 0.0, 0.0])
        T[2, 3] += row.d
        T[:3, :3] = T[:3, :3] @ rot_x(row.alpha)
        assert np.allclose(dh_transform(row, angle), T, atol=1e-12)


def test_planar_two_link_position_oracle(rng):
    arm = planar_two_link()
    for _ in range(20):
        q1, q2 = rng.uniform(-np.pi / 2, np.pi / 2, size=2)
        pose = forward_kinematics(arm, [q1, q2])
        expect = np.array([0.5 * np.cos(q1) + 0.3 * np.cos(q1 + q2),
                           0.5 * np.sin(q1) + 0.3 * np.sin(q1 + q2),
                           0.0])
        assert np.allclose(pose.position, expect, atol=1e-12)
        assert np.allclose(pose.rotation, rot_z(q1 + q2), atol=1e-12)


def test_base_pose_composes_with_chain(rng):
    base = Pose3([0.1, -0.2, 0.5], [0.9, 0.1, 0.3, -0.2])
    plain = default_arm_model()
    offset = default_arm_model(base_pose=base)
    q = generic_config()
    expect = base.compose(forward_kinematics(plain, q))
    got = forward_kinematics(offset, q)
    assert np.allclose(got.position, expect.position, atol=1e-12)
    assert got.angle_to(expect) < 1e-10


def test_joint_limits_enforced():
    arm = default_arm_model()
    ok = np.full(6, 1.0)
    assert np.array_equal(arm.check_limits(ok), ok)
    with pytest.raises(JointLimitError):
        arm.check_limits([0, 0, 3.5, 0, 0, 0])
    with pytest.raises(JointLimitError):
        forward_kinematics(arm, [0, -3.5, 0, 0, 0, 0])
    with pytest.raises(ValueError):
        arm.check_limits([0.0, 0.0])
    clamped = arm.clamp_to_limits(np.full(6, 10.0))
    assert np.array_equal(clamped, arm.upper_limits)


def test_model_construction_validation():
    with pytest.raises(ValueError):
        SerialArmModel([], [], [])
    rows = [DhRow(0.1, 0.0, 0.0)]
    with pytest.raises(ValueError):
        SerialArmModel(rows, [1.0], [-1.0])
    with pytest.raises(ValueError):
        SerialArmModel(rows, [0.0, 0.0], [1.0])


def test_joint_state_wrapper():
    s = JointState([0.1, 0.2])
    assert np.array_equal(s.qdot, np.zeros(2))
    with pytest.raises(ValueError):
        JointState([0.1, 0.2], qdot=[1.0])
    arm = planar_two_link()
    pose = forward_kinematics(arm, JointState([0.3, 0.4]))
    assert np.allclose(pose.position,
                       forward_kinematics(arm, [0.3, 0.4]).position)


def test_jacobian_matches_finite_differences(rng):
    arm = default_arm_model()
    eps = 1e-6
    for _ in range(10):
        q = rng.uniform(-1.2, 1.2, size=6)
        J = jacobian(arm, q)
        J_fd = np.zeros_like(J)
        R0 = forward_kinematics(arm, q).rotation
        for j in range(6):
            dq = np.zeros(6)
            dq[j] = eps
            hi = forward_kinematics(arm, q + dq)
            lo = forward_kinematics(arm, q - dq)
            J_fd[:3, j] = (hi.position - lo.position) / (2 * eps)
            dR = (hi.rotation - lo.rotation) / (2 * eps)
            W = dR @ R0.T  # skew(omega) for the column's angular velocity
            J_fd[3:, j] = [W[2, 1], W[0, 2], W[1, 0]]
        rel = np.linalg.norm(J - J_fd) / max(1.0, np.linalg.norm(J))
        assert rel < 1e-5


def test_velocity_solution_zeroes_residual(rng):
    arm = default_arm_model()
    q = generic_config()
    J = jacobian(arm, q)
    assert not condition_check(J)
    for _ in range(20):
        twist = rng.normal(size=6)
        qdot = solve_joint_velocities(J, twist)
        assert np.linalg.norm(J @ qdot - twist) < 1e-9


def test_velocity_solver_rejects_singular_wrist():
    arm = default_arm_model()
    J = jacobian(arm, np.zeros(6))  # straight wrist: axes 4 and 6 collinear
    assert condition_check(J)
    with pytest.raises(IllConditionedError):
        solve_joint_velocities(J, np.zeros(6))
    with pytest.raises(ValueError):
        solve_joint_velocities(J[:3], np.zeros(3))
    with pytest.raises(ValueError):
        solve_joint_velocities(J, np.zeros(4))


def test_reduced_velocities_minimal_norm(rng):
    arm = default_arm_model()
    q = generic_config()
    J = jacobian(arm, q)
    J3 = J[:3]
    for _ in range(20):
        v = rng.normal(size=3)
        qdot = reduced_pseudoinverse_velocities(J, v)
        assert np.linalg.norm(J3 @ qdot - v) < 1e-9
        # matches the pseudo-inverse solution, the unique minimum-norm one
        assert np.allclose(qdot, np.linalg.pinv(J3) @ v, atol=1e-9)
        # adding any nullspace motion only grows the norm
        _, _, vt = np.linalg.svd(J3)
        null = vt[3:].T @ rng.normal(size=3)
        assert np.linalg.norm(qdot + null) >= np.linalg.norm(qdot) - 1e-12


def test_reduced_velocities_rank_deficient():
    arm = planar_two_link()
    J = jacobian(arm, [0.2, 0.4])  # no z motion possible: rank 2 rows
    with pytest.raises(RankDeficientError):
        reduced_pseudoinverse_velocities(J, [0.0, 0.0, 0.1])
    with pytest.raises(ValueError):
        reduced_pseudoinverse_velocities(J, [0.0, 0.0])


def test_condition_check_ratio_semantics():
    good = np.diag([1.0, 0.8, 0.6, 0.5, 0.4, 0.5])
    assert not condition_check(good)
    bad = np.diag([1.0, 1.0, 1.0, 1.0, 1.0, 5e-3])
    assert condition_check(bad, threshold=100)
    # a larger threshold tolerates less: 5e-3 is fine only once 1/threshold drops below it
    assert not condition_check(bad, threshold=500)
    assert condition_check(np.zeros((6, 6)))


def test_condition_threshold_boundary():
    # ratio exactly at 1/threshold is NOT ill-conditioned (strict less-than)
    J = np.diag([1.0, 1.0, 0.01])
    assert not condition_check(J, threshold=100)
    assert condition_check(J, threshold=99)


def test_model_file_roundtrip(tmp_path, rng):
    base = Pose3([0.05, 0.1, -0.02], [0.8, 0.2, -0.1, 0.3])
    arm = default_arm_model(base_pose=base)
    path = tmp_path / "arm.txt"
    save_arm_model(arm, path)
    loaded = load_arm_model(path)
    assert loaded.num_joints == arm.num_joints
    assert np.allclose(loaded.lower_limits, arm.lower_limits)
    assert np.allclose(loaded.upper_limits, arm.upper_limits)
    q = rng.uniform(-1.0, 1.0, size=6)
    a, b = forward_kinematics(arm, q), forward_kinematics(loaded, q)
    assert np.allclose(a.position, b.position, atol=1e-9)
    assert a.angle_to(b) < 1e-8


def test_model_file_rejects_malformed(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("0.1 0 0 0 -1 1\n")
    with pytest.raises(ValueError):
        load_arm_model(bad)
    short = tmp_path / "short.txt"
    short.write_text("joints 2\n0.1 0 0 0 -1 1\n")
    with pytest.raises(ValueError):
        load_arm_model(short)


def test_default_arm_reach_bound(rng):
    arm = default_arm_model()
    assert arm.reach == pytest.approx(0.30 + 0.38 + 0.32 + 0.12)
    for _ in range(20):
        q = rng.uniform(-2.9, 2.9, size=6)
        tip = forward_kinematics(arm, q).position
        assert np.linalg.norm(tip) <= arm.reach + 1e-9
