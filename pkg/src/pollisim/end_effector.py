"""Three-actuator parallel-plate end effector and its pose lookup table.

Three linear actuators sit 120 degrees apart on a circle in the tool frame
and push a plate along +z.  The plate is treated as rigid between the three
tips: its pose is the plane through the tips, positioned at their centroid,
oriented by the minimal rotation that takes +z onto the plane normal.

Inverse kinematics goes through an exhaustive lookup table of command
triples (the simulated analog of calibrating the physical plate by tracking
a marker through all command permutations), queried with a weighted
position + orientation distance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Pose3, quat_angle, quat_from_axis_angle

DEFAULT_RADIUS = 0.015
DEFAULT_STROKE = (0.0, 0.020)
# one radian of plate tilt counts the same as 5 cm of position error
DEFAULT_ORIENTATION_WEIGHT = 0.05

_LUT_MAGIC = b"HEL1"


class StrokeLimitError(ValueError):
    """An actuator command lies outside the stroke range."""


@dataclass(frozen=True)
class ParallelPlatform:
    radius: float = DEFAULT_RADIUS
    stroke: tuple = DEFAULT_STROKE

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("actuator circle radius must be positive")
        lo, hi = self.stroke
        if not (0.0 <= lo < hi):
            raise ValueError("stroke must satisfy 0 <= min < max")

    def actuator_positions(self) -> np.ndarray:
        """(3, 3) actuator base points in the tool frame, 120 degrees apart."""
        angles = np.deg2rad([0.0, 120.0, 240.0])
        return np.column_stack([self.radius * np.cos(angles),
                                self.radius * np.sin(angles),
                                np.zeros(3)])

    def check_command(self, cmd) -> np.ndarray:
        cmd = np.asarray(cmd, dtype=float).reshape(-1)
        if cmd.shape != (3,):
            raise ValueError("command must be an extension triple")
        lo, hi = self.stroke
        if np.any(cmd < lo - 1e-12) or np.any(cmd > hi + 1e-12):
            raise StrokeLimitError(
                f"extensions {cmd.tolist()} outside stroke [{lo}, {hi}]")
        return cmd


def platform_forward_pose(platform: ParallelPlatform, cmd) -> Pose3:
    """Plate pose in the tool frame for one extension triple.

    Equal extensions give a pure +z translation; unequal extensions tilt the
    plate toward the shorter actuators.
    """
    cmd = platform.check_command(cmd)
    tips = platform.actuator_positions()
    tips = tips + np.column_stack([np.zeros(3), np.zeros(3), cmd])
    centroid = tips.mean(axis=0)
    normal = np.cross(tips[1] - tips[0], tips[2] - tips[0])
    n = float(np.linalg.norm(normal))
    if n < 1e-15:
        raise ValueError("degenerate actuator layout")
    normal = normal / n
    if normal[2] < 0:
        normal = -normal
    # minimal rotation aligning the tool +z axis with the plate normal
    z = np.array([0.0, 0.0, 1.0])
    axis = np.cross(z, normal)
    angle = float(np.arctan2(np.linalg.norm(axis), np.dot(z, normal)))
    quat = quat_from_axis_angle(axis, angle)
    return Pose3(centroid, quat)


def platform_tilt(platform: ParallelPlatform, cmd) -> float:
    """Angle in radians between the plate normal and the tool +z axis."""
    pose = platform_forward_pose(platform, cmd)
    return float(np.arccos(np.clip(pose.z_axis()[2], -1.0, 1.0)))


@dataclass
class HandEyeLUT:
    grid_step: float
    stroke: tuple
    commands: np.ndarray   # (N, 3) extension triples, lexicographic order
    positions: np.ndarray  # (N, 3) plate centroids
    quats: np.ndarray      # (N, 4) plate orientations (w, x, y, z)

    def __len__(self) -> int:
        return self.commands.shape[0]

    def entry_pose(self, i: int) -> Pose3:
        return Pose3(self.positions[i], self.quats[i])


def build_ik_lut(platform: ParallelPlatform, grid_step: float) -> HandEyeLUT:
    """Record the forward pose of every command triple on a regular grid.

    grid_step must divide the stroke span so the grid includes both stroke
    bounds exactly.
    """
    lo, hi = platform.stroke
    span = hi - lo
    steps = span / grid_step
    if grid_step <= 0 or abs(steps - round(steps)) > 1e-9:
        raise ValueError(f"grid step {grid_step} does not divide the stroke span {span}")
    ticks = lo + grid_step * np.arange(int(round(steps)) + 1)
    a, b, c = np.meshgrid(ticks, ticks, ticks, indexing="ij")
    commands = np.column_stack([a.ravel(), b.ravel(), c.ravel()])
    positions = np.empty((commands.shape[0], 3))
    quats = np.empty((commands.shape[0], 4))
    for i, cmd in enumerate(commands):
        pose = platform_forward_pose(platform, cmd)
        positions[i] = pose.position
        quats[i] = pose.quat
    return HandEyeLUT(grid_step=float(grid_step), stroke=(float(lo), float(hi)),
                      commands=commands, positions=positions, quats=quats)


def query_ik_lut(lut: HandEyeLUT, target: Pose3,
                 orientation_weight: float = DEFAULT_ORIENTATION_WEIGHT) -> np.ndarray:
    """Command whose recorded pose is nearest the target.

    Distance is position error in meters plus orientation_weight times the
    rotation angle in radians; ties break to the lowest grid index, and
    out-of-workspace targets clamp to the nearest boundary entry.
    """
    dp = np.linalg.norm(lut.positions - target.position, axis=1)
    dots = np.abs(lut.quats @ target.quat)
    dang = 2.0 * np.arccos(np.clip(dots, -1.0, 1.0))
    best = int(np.argmin(dp + orientation_weight * dang))
    return lut.commands[best].copy()


def save_ik_lut(lut: HandEyeLUT, path) -> None:
    with open(path, "wb") as f:
        f.write(_LUT_MAGIC)
        header = np.array([lut.grid_step, lut.stroke[0], lut.stroke[1]])
        f.write(header.astype("<f8").tobytes())
        f.write(np.array([len(lut)], dtype="<u4").tobytes())
        f.write(lut.commands.astype("<f8").tobytes())
        f.write(lut.positions.astype("<f8").tobytes())
        f.write(lut.quats.astype("<f8").tobytes())


def load_ik_lut(path) -> HandEyeLUT:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _LUT_MAGIC:
            raise ValueError(f"not a pose lookup table file: {magic!r}")
        grid_step, lo, hi = np.frombuffer(f.read(24), dtype="<f8")
        n = int(np.frombuffer(f.read(4), dtype="<u4")[0])
        commands = np.frombuffer(f.read(n * 24), dtype="<f8").reshape(n, 3).copy()
        positions = np.frombuffer(f.read(n * 24), dtype="<f8").reshape(n, 3).copy()
        quats = np.frombuffer(f.read(n * 32), dtype="<f8").reshape(n, 4).copy()
    return HandEyeLUT(grid_step=float(grid_step), stroke=(float(lo), float(hi)),
                      commands=commands, positions=positions, quats=quats)
