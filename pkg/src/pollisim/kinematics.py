"""Serial-arm forward kinematics, geometric Jacobian, and velocity solvers.

The arm is a chain of revolute joints described by standard
Denavit-Hartenberg rows (a, alpha, d, theta_offset).  The default model is a
six-joint chain with a spherical wrist sized like the small collaborative
arms used for plant handling (usable reach just under a meter); the exact
geometry is configuration data, not behavior, and can be swapped via the
text model format below.

Model file format (whitespace separated, '#' comments):

    joints <n>
    <a> <alpha> <d> <theta_offset> <lower> <upper>   # one line per joint
    base <x> <y> <z> <qw> <qx> <qy> <qz>             # optional, default identity

Lengths in meters, angles in radians.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose3

DEFAULT_CONDITION_THRESHOLD = 100.0


class JointLimitError(ValueError):
    """A requested configuration lies outside the arm's joint limits."""


class IllConditionedError(RuntimeError):
    """The Jacobian is too close to singular for a direct inverse; callers
    should fall back to translation-only control."""


class RankDeficientError(RuntimeError):
    """The reduced (translation) Jacobian has lost row rank."""


@dataclass(frozen=True)
class DhRow:
    a: float
    alpha: float
    d: float
    theta_offset: float = 0.0


@dataclass
class JointState:
    q: np.ndarray
    qdot: np.ndarray = None

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).reshape(-1)
        if self.qdot is None:
            self.qdot = np.zeros_like(self.q)
        else:
            self.qdot = np.asarray(self.qdot, dtype=float).reshape(-1)
            if self.qdot.shape != self.q.shape:
                raise ValueError("q and qdot must have the same length")


class SerialArmModel:
    def __init__(self, dh_rows, lower_limits, upper_limits,
                 base_pose: Pose3 | None = None, reach: float | None = None):
        self.dh_rows = tuple(DhRow(*r) if not isinstance(r, DhRow) else r
                             for r in dh_rows)
        self.lower_limits = np.asarray(lower_limits, dtype=float).reshape(-1)
        self.upper_limits = np.asarray(upper_limits, dtype=float).reshape(-1)
        n = len(self.dh_rows)
        if n == 0:
            raise ValueError("arm needs at least one joint")
        if self.lower_limits.shape != (n,) or self.upper_limits.shape != (n,):
            raise ValueError("joint limits must match the joint count")
        if np.any(self.lower_limits >= self.upper_limits):
            raise ValueError("every lower limit must be below its upper limit")
        self.base_pose = base_pose if base_pose is not None else Pose3.identity()
        # sum of DH offsets bounds the distance any point of the chain can
        # reach from the base, whatever the configuration
        link_bound = float(sum(abs(r.a) + abs(r.d) for r in self.dh_rows))
        self.reach = float(reach) if reach is not None else link_bound

    @property
    def num_joints(self) -> int:
        return len(self.dh_rows)

    def check_limits(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float).reshape(-1)
        if q.shape != (self.num_joints,):
            raise ValueError(f"expected {self.num_joints} joint angles, got {q.shape}")
        bad = np.nonzero((q < self.lower_limits) | (q > self.upper_limits))[0]
        if bad.size:
            raise JointLimitError(
                f"joints {bad.tolist()} outside limits: q={np.round(q[bad], 4).tolist()}")
        return q

    def clamp_to_limits(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float).reshape(-1)
        return np.clip(q, self.lower_limits, self.upper_limits)


def dh_transform(row: DhRow, angle: float) -> np.ndarray:
    """Standard DH link transform for a revolute joint at the given angle."""
    th = angle + row.theta_offset
    ct, st = np.cos(th), np.sin(th)
    ca, sa = np.cos(row.alpha), np.sin(row.alpha)
    return np.array([
        [ct, -st * ca, st * sa, row.a * ct],
        [st, ct * ca, -ct * sa, row.a * st],
        [0.0, sa, ca, row.d],
        [0.0, 0.0, 0.0, 1.0],
    ])


def _chain_frames(arm: SerialArmModel, q: np.ndarray):
    """Base-frame transform of every joint frame, including the base itself
    (frames[0] = base, frames[i] = pose after joint i)."""
    frames = [arm.base_pose.matrix()]
    T = frames[0]
    for row, angle in zip(arm.dh_rows, q):
        T = T @ dh_transform(row, angle)
        frames.append(T)
    return frames


def forward_kinematics(arm: SerialArmModel, q) -> Pose3:
    """End-effector pose for the given configuration (limits enforced)."""
    if isinstance(q, JointState):
        q = q.q
    q = arm.check_limits(q)
    return Pose3.from_matrix(_chain_frames(arm, q)[-1])


def jacobian(arm: SerialArmModel, q) -> np.ndarray:
    """Geometric Jacobian (6 x n): rows 0-2 linear, rows 3-5 angular, both in
    the base frame.  Column j is (z_j x (p_e - p_j); z_j) where z_j and p_j
    come from the frame preceding joint j."""
    if isinstance(q, JointState):
        q = q.q
    q = arm.check_limits(q)
    frames = _chain_frames(arm, q)
    p_e = frames[-1][:3, 3]
    J = np.zeros((6, arm.num_joints))
    for j in range(arm.num_joints):
        z = frames[j][:3, 2]
        p = frames[j][:3, 3]
        J[:3, j] = np.cross(z, p_e - p)
        J[3:, j] = z
    return J


def condition_check(J, threshold: float = DEFAULT_CONDITION_THRESHOLD) -> bool:
    """True when the Jacobian is ill-conditioned: smallest over largest
    singular value below 1/threshold."""
    s = np.linalg.svd(np.asarray(J, dtype=float), compute_uv=False)
    smax = float(s.max(initial=0.0))
    if smax == 0.0:
        return True
    return float(s.min()) / smax < 1.0 / float(threshold)


def solve_joint_velocities(J, xdot_star,
                           condition_threshold: float = DEFAULT_CONDITION_THRESHOLD
                           ) -> np.ndarray:
    """Joint velocities realizing the full 6-D task-space velocity.

    Requires a square Jacobian; raises IllConditionedError near singularities
    so the caller can drop to translation-only control.
    """
    J = np.asarray(J, dtype=float)
    xdot_star = np.asarray(xdot_star, dtype=float).reshape(-1)
    if J.shape[0] != J.shape[1]:
        raise ValueError(f"need a square Jacobian, got {J.shape}")
    if xdot_star.shape != (J.shape[0],):
        raise ValueError("task velocity has wrong dimension")
    if condition_check(J, condition_threshold):
        raise IllConditionedError(
            "Jacobian condition exceeds threshold; use translation-only control")
    return np.linalg.solve(J, xdot_star)


def reduced_pseudoinverse_velocities(J, v_star) -> np.ndarray:
    """Minimum-norm joint velocities for a translation-only command.

    Uses the right pseudo-inverse of the linear-velocity rows:
    qdot = J_R^T (J_R J_R^T)^-1 v*, the smallest ||qdot|| achieving v*.
    """
    J = np.asarray(J, dtype=float)
    v_star = np.asarray(v_star, dtype=float).reshape(-1)
    if v_star.shape != (3,):
        raise ValueError("translation command must be a 3-vector")
    J_r = J[:3, :]
    gram = J_r @ J_r.T
    if condition_check(gram, 1e12) or not np.isfinite(gram).all():
        raise RankDeficientError("translation rows of the Jacobian are rank deficient")
    try:
        y = np.linalg.solve(gram, v_star)
    except np.linalg.LinAlgError as err:
        raise RankDeficientError("translation rows of the Jacobian are rank deficient") from err
    return J_r.T @ y


# -- default model -----------------------------------------------------------

def default_arm_model(base_pose: Pose3 | None = None) -> SerialArmModel:
    """Six-revolute elbow arm with a spherical wrist, ~0.9 m usable reach."""
    rows = [
        DhRow(a=0.0, alpha=np.pi / 2, d=0.30, theta_offset=0.0),
        DhRow(a=0.38, alpha=0.0, d=0.0, theta_offset=0.0),
        DhRow(a=0.0, alpha=np.pi / 2, d=0.0, theta_offset=0.0),
        DhRow(a=0.0, alpha=-np.pi / 2, d=0.32, theta_offset=0.0),
        DhRow(a=0.0, alpha=np.pi / 2, d=0.0, theta_offset=0.0),
        DhRow(a=0.0, alpha=0.0, d=0.12, theta_offset=0.0),
    ]
    lim = 2.9  # ~166 degrees each way
    return SerialArmModel(rows, [-lim] * 6, [lim] * 6, base_pose=base_pose)


# -- model file I/O ----------------------------------------------------------

def save_arm_model(arm: SerialArmModel, path) -> None:
    lines = ["# serial arm model: a alpha d theta_offset lower upper",
             f"joints {arm.num_joints}"]
    for row, lo, hi in zip(arm.dh_rows, arm.lower_limits, arm.upper_limits):
        lines.append(f"{row.a:.9g} {row.alpha:.9g} {row.d:.9g} "
                     f"{row.theta_offset:.9g} {lo:.9g} {hi:.9g}")
    p = arm.base_pose.position
    q = arm.base_pose.quat
    lines.append(f"base {p[0]:.9g} {p[1]:.9g} {p[2]:.9g} "
                 f"{q[0]:.9g} {q[1]:.9g} {q[2]:.9g} {q[3]:.9g}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_arm_model(path) -> SerialArmModel:
    with open(path) as f:
        tokens_by_line = [ln.split() for ln in f
                          if ln.strip() and not ln.lstrip().startswith("#")]
    if not tokens_by_line or tokens_by_line[0][0] != "joints":
        raise ValueError("arm model file must start with a 'joints <n>' line")
    n = int(tokens_by_line[0][1])
    rows, lowers, uppers = [], [], []
    base = Pose3.identity()
    for tok in tokens_by_line[1:]:
        if tok[0] == "base":
            vals = [float(t) for t in tok[1:8]]
            base = Pose3(vals[:3], vals[3:])
            continue
        a, alpha, d, off, lo, hi = (float(t) for t in tok[:6])
        rows.append(DhRow(a, alpha, d, off))
        lowers.append(lo)
        uppers.append(hi)
    if len(rows) != n:
        raise ValueError(f"expected {n} joint rows, found {len(rows)}")
    return SerialArmModel(rows, lowers, uppers, base_pose=base)
