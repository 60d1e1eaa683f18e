"""Two-phase Cartesian visual servoing to flower contact.

The controller first translates in the plane parallel to the flower face
until the in-plane misalignment is below threshold (ParallelAlign), then
approaches straight toward the flower (OrthogonalApproach).  Angular
velocity is commanded to zero throughout; when the Jacobian goes
ill-conditioned the controller drops to translation-only control via the
right pseudo-inverse and resumes the interrupted phase once conditioning
recovers.  Inside the camera's minimum range the flower estimate is frozen
and the approach continues blind, so any estimate error at that moment
becomes terminal miss distance.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .end_effector import ParallelPlatform, platform_forward_pose, query_ik_lut
from .geometry import Pose3, quat_from_axis_angle
from .kinematics import (IllConditionedError, JointLimitError, condition_check,
                         forward_kinematics, jacobian,
                         reduced_pseudoinverse_velocities,
                         solve_joint_velocities)


class ServoPhase(Enum):
    PARALLEL_ALIGN = "parallel_align"
    ORTHOGONAL_APPROACH = "orthogonal_approach"
    TRANSLATION_ONLY = "translation_only"
    BLIND_APPROACH = "blind_approach"
    CONTACT = "contact"
    FAILED = "failed"


TERMINAL_PHASES = (ServoPhase.CONTACT, ServoPhase.FAILED)


@dataclass
class ServoParams:
    parallel_threshold: float = 0.005   # in-plane alignment goal, meters
    contact_distance: float = 0.003     # tip-to-flower distance at contact
    velocity_norm: float = 0.15         # commanded ||qdot||, rad/s
    dt: float = 0.05                    # control period, seconds
    condition_threshold: float = 100.0
    blind_trigger: float = 0.06         # camera minimum range, meters
    max_steps: int = 1000

    def __post_init__(self):
        vals = (self.parallel_threshold, self.contact_distance,
                self.velocity_norm, self.dt, self.condition_threshold,
                self.blind_trigger, self.max_steps)
        if any(v <= 0 for v in vals):
            raise ValueError("servo parameters must all be positive")
        if self.contact_distance >= self.blind_trigger:
            raise ValueError("contact distance must be below the blind trigger")


@dataclass
class ServoState:
    phase: ServoPhase = ServoPhase.PARALLEL_ALIGN
    d_par: np.ndarray = field(default_factory=lambda: np.zeros(3))
    d_g: np.ndarray = field(default_factory=lambda: np.zeros(3))
    steps: int = 0
    # phase to resume once the Jacobian conditioning recovers
    resume_phase: ServoPhase | None = None
    # flower estimate captured when the camera lost sight of the flower
    frozen_flower: Pose3 | None = None


def compute_alignment(tip_pose: Pose3, flower_pose: Pose3):
    """(d_par, d_g): tip-to-flower vector and its in-flower-plane part."""
    d_g = np.asarray(flower_pose.position, dtype=float) - tip_pose.position
    normal = flower_pose.z_axis()
    d_par = d_g - (d_g @ normal) * normal
    return d_par, d_g


def servo_step(state: ServoState, arm, q, flower_pose: Pose3,
               params: ServoParams):
    """One control step: (qdot command, updated state).

    flower_pose is the current estimate; once BlindApproach starts the
    state's frozen estimate is used instead, whatever is passed in.
    """
    q = np.asarray(q, dtype=float)
    if state.phase in TERMINAL_PHASES:
        return np.zeros(arm.num_joints), state

    if state.steps >= params.max_steps:
        state.phase = ServoPhase.FAILED
        return np.zeros(arm.num_joints), state
    state.steps += 1

    target = state.frozen_flower if state.frozen_flower is not None else flower_pose
    try:
        tip = forward_kinematics(arm, q)
    except JointLimitError:
        state.phase = ServoPhase.FAILED
        return np.zeros(arm.num_joints), state
    state.d_par, state.d_g = compute_alignment(tip, target)
    dist = float(np.linalg.norm(state.d_g))

    if dist <= params.contact_distance:
        state.phase = ServoPhase.CONTACT
        return np.zeros(arm.num_joints), state

    # phase transitions on the freshly measured alignment
    if state.phase == ServoPhase.PARALLEL_ALIGN and \
            float(np.linalg.norm(state.d_par)) < params.parallel_threshold:
        state.phase = ServoPhase.ORTHOGONAL_APPROACH
    if state.phase == ServoPhase.ORTHOGONAL_APPROACH and dist < params.blind_trigger:
        state.phase = ServoPhase.BLIND_APPROACH
        state.frozen_flower = target

    J = jacobian(arm, q)
    if state.phase == ServoPhase.TRANSLATION_ONLY and \
            not condition_check(J, params.condition_threshold):
        state.phase = state.resume_phase or ServoPhase.PARALLEL_ALIGN
        state.resume_phase = None

    active = state.phase if state.phase != ServoPhase.TRANSLATION_ONLY \
        else (state.resume_phase or ServoPhase.PARALLEL_ALIGN)
    v = state.d_par if active == ServoPhase.PARALLEL_ALIGN else state.d_g

    if state.phase == ServoPhase.TRANSLATION_ONLY:
        qdot = reduced_pseudoinverse_velocities(J, v)
    else:
        xdot = np.concatenate([v, np.zeros(3)])
        try:
            qdot = solve_joint_velocities(J, xdot, params.condition_threshold)
        except IllConditionedError:
            state.resume_phase = state.phase
            state.phase = ServoPhase.TRANSLATION_ONLY
            qdot = reduced_pseudoinverse_velocities(J, v)

    n = float(np.linalg.norm(qdot))
    if n > 1e-12:
        qdot = qdot * (params.velocity_norm / n)
    else:
        qdot = np.zeros(arm.num_joints)
    return qdot, state


def run_servo(arm, q0, flower_pose: Pose3, params: ServoParams | None = None,
              observe=None):
    """Integrate servo steps until Contact or Failed.

    observe(step_index) can supply a fresh (noisy) flower estimate per step;
    by default the fixed flower_pose is used.  Returns (state, final q,
    telemetry rows) where each row is (step, phase, ||d_par||, ||d_g||, q).
    """
    params = params if params is not None else ServoParams()
    q = np.asarray(q0, dtype=float).copy()
    state = ServoState()
    rows = []
    while state.phase not in TERMINAL_PHASES:
        est = observe(state.steps) if observe is not None else flower_pose
        qdot, state = servo_step(state, arm, q, est, params)
        rows.append((state.steps, state.phase.value,
                     float(np.linalg.norm(state.d_par)),
                     float(np.linalg.norm(state.d_g)), q.copy()))
        if state.phase in TERMINAL_PHASES:
            break
        q = q + qdot * params.dt
    return state, q, rows


def write_servo_telemetry(path, rows) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        nq = len(rows[0][4]) if rows else 6
        writer.writerow(["step", "phase", "d_par", "d_g"]
                        + [f"q{i}" for i in range(nq)])
        for step, phase, dpar, dg, q in rows:
            writer.writerow([step, phase, f"{dpar:.6f}", f"{dg:.6f}"]
                            + [f"{qi:.6f}" for qi in q])


# -- pollination actuation ----------------------------------------------------

POLLINATION_CYCLES = 3
POLLINATION_SAMPLES_PER_CYCLE = 8
# differential extension amplitude as a fraction of the stroke span
POLLINATION_AMPLITUDE = 0.25


@dataclass
class PollinationTrace:
    commands: np.ndarray        # (N, 3) actuator extensions over the motion
    plate_points: np.ndarray    # (N, 3) plate centers in the tool frame
    world_points: np.ndarray    # (N, 3) plate centers in the world frame
    align_command: np.ndarray   # initial plate-to-flower alignment triple


def pollinate(platform: ParallelPlatform, lut, flower_pose: Pose3,
              tip_pose: Pose3, cycles: int = POLLINATION_CYCLES,
              samples_per_cycle: int = POLLINATION_SAMPLES_PER_CYCLE
              ) -> PollinationTrace:
    """Align the plate to the flower face, then rock it cyclically.

    The alignment command comes from the pose lookup table; the rubbing
    motion superimposes a rotating differential extension (120 degrees
    apart per actuator) on top of it for the given number of cycles.
    Returns the plate-center trace for contact scoring.
    """
    # flower normal seen from the tool frame; the plate should face it
    n_tool = tip_pose.inverse().transform_direction(flower_pose.z_axis())
    plate_z = -n_tool  # plate pushes toward the flower face
    if plate_z[2] < 0:  # LUT only covers forward-facing plate poses
        plate_z = -plate_z
    z = np.array([0.0, 0.0, 1.0])
    axis = np.cross(z, plate_z)
    angle = float(np.arctan2(np.linalg.norm(axis), np.dot(z, plate_z)))
    lo, hi = platform.stroke
    mid = 0.5 * (lo + hi)
    target = Pose3(np.array([0.0, 0.0, mid]), quat_from_axis_angle(axis, angle))
    align_cmd = query_ik_lut(lut, target)

    amp = POLLINATION_AMPLITUDE * (hi - lo)
    total = cycles * samples_per_cycle
    commands = np.empty((total, 3))
    plate_points = np.empty((total, 3))
    offsets = np.deg2rad([0.0, 120.0, 240.0])
    for k in range(total):
        phase = 2.0 * np.pi * (k % samples_per_cycle) / samples_per_cycle
        cmd = np.clip(align_cmd + amp * np.sin(phase + offsets), lo, hi)
        commands[k] = cmd
        plate_points[k] = platform_forward_pose(platform, cmd).position
    world_points = tip_pose.transform(plate_points)
    return PollinationTrace(commands=commands, plate_points=plate_points,
                            world_points=np.asarray(world_points),
                            align_command=align_cmd)
