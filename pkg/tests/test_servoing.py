import csv

import numpy as np
import pytest

from pollisim.end_effector import ParallelPlatform, build_ik_lut, platform_forward_pose
from pollisim.geometry import Pose3, look_at_pose, quat_from_axis_angle
from pollisim.kinematics import condition_check, forward_kinematics, jacobian
from pollisim.servoing import (
    ServoParams,
    ServoPhase,
    ServoState,
    TERMINAL_PHASES,
    compute_alignment,
    pollinate,
    run_servo,
    servo_step,
    write_servo_telemetry,
)
from pollisim.sim.pipeline import solve_tool_ik

GENERIC_Q = np.array([0.3, -0.5, 0.7, 0.4, 0.8, -0.2])
FLOWER_POS = np.array([0.45, 0.05, 0.35])
IK_SEED = np.array([0.0, -0.6, 0.9, 0.0, 0.6, 0.0])


def pose_facing(position, normal):
    """Pose whose z-axis points along the given normal."""
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    z = np.array([0.0, 0.0, 1.0])
    axis = np.cross(z, n)
    angle = float(np.arctan2(np.linalg.norm(axis), z @ n))
    return Pose3(position, quat_from_axis_angle(axis if np.linalg.norm(axis) > 1e-12
                                                else np.array([1.0, 0.0, 0.0]), angle))


def vantage_start(arm, flower_position, standoff=0.15):
    """Joint configuration at a vantage straight back from the flower."""
    fpos = np.asarray(flower_position, dtype=float)
    eye = fpos + standoff * np.array([-1.0, 0.0, 0.0])
    q0, converged = solve_tool_ik(arm, look_at_pose(eye, fpos), IK_SEED)
    assert converged
    return q0


def test_compute_alignment_splits_by_flower_plane():
    tip = Pose3([0.0, 0.0, 0.0])
    flower = pose_facing([0.3, 0.1, 0.05], [1.0, 0.0, 0.0])
    d_par, d_g = compute_alignment(tip, flower)
    assert np.allclose(d_g, [0.3, 0.1, 0.05])
    assert np.allclose(d_par, [0.0, 0.1, 0.05], atol=1e-12)
    # decomposition identity: d_par is the in-plane remainder
    n = flower.z_axis()
    assert abs(d_par @ n) < 1e-12
    assert np.allclose(d_par + (d_g @ n) * n, d_g, atol=1e-12)


def test_params_validation():
    with pytest.raises(ValueError):
        ServoParams(dt=0.0)
    with pytest.raises(ValueError):
        ServoParams(contact_distance=0.07, blind_trigger=0.06)
    ServoParams()  # defaults are consistent


def test_head_on_approach_reaches_contact(arm):
    flower = pose_facing(FLOWER_POS, [-1.0, 0.0, 0.0])
    q0 = vantage_start(arm, FLOWER_POS)
    params = ServoParams()
    state, q, rows = run_servo(arm, q0, flower, params)
    assert state.phase == ServoPhase.CONTACT
    assert state.steps <= 500
    tip = forward_kinematics(arm, q)
    assert np.linalg.norm(flower.position - tip.position) <= params.contact_distance
    # distance telemetry shrinks from standoff to contact
    assert rows[0][3] == pytest.approx(0.15, abs=1e-3)
    assert rows[-1][3] <= params.contact_distance


def test_phases_progress_in_order(arm):
    # tilted face: a large in-plane component forces a real alignment phase
    normal = -np.array([np.cos(0.7), 0.0, np.sin(0.7)])
    flower = pose_facing(FLOWER_POS, normal)
    q0 = vantage_start(arm, FLOWER_POS)
    state, q, rows = run_servo(arm, q0, flower)
    assert state.phase == ServoPhase.CONTACT
    phases = [r[1] for r in rows]
    assert "parallel_align" in phases
    assert "orthogonal_approach" in phases
    assert "blind_approach" in phases
    # once left, parallel_align never recurs (no fallback in this run)
    order = {"parallel_align": 0, "orthogonal_approach": 1,
             "blind_approach": 2, "contact": 3}
    ranks = [order[p] for p in phases]
    assert ranks == sorted(ranks)
    # at the moment alignment finished, the in-plane error was below threshold
    first_ortho = phases.index("orthogonal_approach")
    assert rows[first_ortho][2] < ServoParams().parallel_threshold


def test_contact_check_wins_over_transitions(arm):
    tip = forward_kinematics(arm, GENERIC_Q)
    # misaligned but already touching: contact is declared immediately
    flower = pose_facing(tip.position + np.array([0.002, 0.0, 0.0]), [0.0, 0.0, 1.0])
    state = ServoState()
    qdot, state = servo_step(state, arm, GENERIC_Q, flower, ServoParams())
    assert state.phase == ServoPhase.CONTACT
    assert np.array_equal(qdot, np.zeros(6))


def test_terminal_state_is_absorbing(arm):
    state = ServoState(phase=ServoPhase.CONTACT, steps=7)
    flower = pose_facing(FLOWER_POS, [-1.0, 0.0, 0.0])
    qdot, after = servo_step(state, arm, GENERIC_Q, flower, ServoParams())
    assert after.phase == ServoPhase.CONTACT
    assert after.steps == 7
    assert np.array_equal(qdot, np.zeros(6))


def test_blind_approach_freezes_estimate(arm):
    tip = forward_kinematics(arm, GENERIC_Q)
    # a flower inside the blind trigger range, squarely facing the tip
    inside = pose_facing(tip.position + np.array([0.05, 0.0, 0.0]), [-1.0, 0.0, 0.0])
    params = ServoParams()
    state = ServoState(phase=ServoPhase.ORTHOGONAL_APPROACH)
    _, state = servo_step(state, arm, GENERIC_Q, inside, params)
    assert state.phase == ServoPhase.BLIND_APPROACH
    assert state.frozen_flower is not None
    assert np.allclose(state.frozen_flower.position, inside.position)
    # a wildly different estimate is ignored from now on
    decoy = pose_facing(inside.position + np.array([0.5, 0.0, 0.0]), [0, 0, 1.0])
    _, state = servo_step(state, arm, GENERIC_Q, decoy, params)
    assert np.allclose(state.d_g, inside.position - tip.position, atol=1e-9)


def test_ill_conditioned_drops_to_translation_and_resumes(arm):
    q_sing = np.zeros(6)
    assert condition_check(jacobian(arm, q_sing))
    flower = pose_facing([0.45, 0.35, 0.60], [0.0, 0.0, 1.0])
    params = ServoParams()
    state = ServoState()
    qdot, state = servo_step(state, arm, q_sing, flower, params)
    assert state.phase == ServoPhase.TRANSLATION_ONLY
    assert state.resume_phase == ServoPhase.PARALLEL_ALIGN
    assert np.linalg.norm(qdot) == pytest.approx(params.velocity_norm)
    # conditioning recovers at a generic configuration: phase resumes
    qdot, state = servo_step(state, arm, GENERIC_Q, flower, params)
    assert state.phase == ServoPhase.PARALLEL_ALIGN
    assert state.resume_phase is None


def test_commanded_speed_is_constant(arm):
    flower = pose_facing(FLOWER_POS, [-1.0, 0.0, 0.0])
    params = ServoParams()
    _, _, rows = run_servo(arm, vantage_start(arm, FLOWER_POS), flower, params)
    qs = [r[4] for r in rows]
    for a, b in zip(qs, qs[1:]):
        step = np.linalg.norm(b - a)
        assert step == pytest.approx(params.velocity_norm * params.dt, abs=1e-12)


def test_unreachable_target_fails_within_step_budget(arm):
    flower = pose_facing([2.5, 0.0, 0.3], [-1.0, 0.0, 0.0])
    params = ServoParams(max_steps=30)
    state, _, rows = run_servo(arm, GENERIC_Q, flower, params)
    assert state.phase == ServoPhase.FAILED
    assert state.steps <= params.max_steps + 1
    assert rows[-1][1] == "failed"
    assert state.phase in TERMINAL_PHASES


def test_noisy_observations_still_converge(arm, rng):
    flower = pose_facing(FLOWER_POS, [-1.0, 0.0, 0.0])
    jitter = rng.normal(scale=0.002, size=(1200, 3))

    def observe(step):
        return Pose3(flower.position + jitter[step % len(jitter)], flower.quat)

    state, q, _ = run_servo(arm, vantage_start(arm, FLOWER_POS), flower,
                            ServoParams(), observe=observe)
    assert state.phase == ServoPhase.CONTACT
    tip = forward_kinematics(arm, q)
    # noise shifts the terminal point by at most its own scale
    assert np.linalg.norm(flower.position - tip.position) < 0.015


def test_telemetry_file_roundtrip(tmp_path, arm):
    flower = pose_facing(FLOWER_POS, [-1.0, 0.0, 0.0])
    _, _, rows = run_servo(arm, vantage_start(arm, FLOWER_POS), flower)
    path = tmp_path / "servo.csv"
    write_servo_telemetry(path, rows)
    with open(path) as f:
        read = list(csv.reader(f))
    assert read[0][:4] == ["step", "phase", "d_par", "d_g"]
    assert len(read) == len(rows) + 1
    assert read[-1][1] == "contact"


def test_pollinate_flat_face_rocks_about_midstroke():
    platform = ParallelPlatform()
    lut = build_ik_lut(platform, grid_step=0.005)
    flower = pose_facing([0.0, 0.0, 0.1], [0.0, 0.0, -1.0])
    trace = pollinate(platform, lut, flower, Pose3.identity())
    assert np.allclose(trace.align_command, [0.01, 0.01, 0.01])
    assert trace.commands.shape == (24, 3)
    assert np.all(trace.commands >= 0.0) and np.all(trace.commands <= 0.02)
    # sinusoidal differential drive: period of one cycle, zero cycle mean
    assert np.array_equal(trace.commands[:8], trace.commands[8:16])
    assert np.allclose(trace.commands[:8].mean(axis=0), trace.align_command,
                       atol=1e-12)
    amp = np.abs(trace.commands - trace.align_command).max()
    assert amp == pytest.approx(0.25 * 0.02, abs=1e-9)
    # identity tool pose: world trace equals the plate trace
    assert np.allclose(trace.world_points, trace.plate_points)


def test_pollinate_aligns_plate_to_tilted_face():
    platform = ParallelPlatform()
    lut = build_ik_lut(platform, grid_step=0.005)
    tilt = np.deg2rad(15.0)
    normal = np.array([np.sin(tilt), 0.0, -np.cos(tilt)])
    flower = pose_facing([0.02, 0.0, 0.1], normal)
    trace = pollinate(platform, lut, flower, Pose3.identity())
    plate = platform_forward_pose(platform, trace.align_command)
    assert not np.allclose(trace.align_command, trace.align_command[0])
    # plate normal tracks the (flipped) flower normal up to grid coarseness
    want = -normal
    assert plate.z_axis() @ want > np.cos(0.2)
    # the rub happens against the face: plate centers stay in the tool frame
    assert np.all(np.abs(trace.plate_points[:, 2] - 0.01) < 0.012)
