"""Rigid-body poses, pinhole camera model, and projection utilities.

Conventions used throughout the package:
  - camera frame: +z forward (optical axis), +x right, +y down
  - quaternions stored (w, x, y, z), unit norm, canonicalized to w >= 0
  - depth images store the camera-frame z coordinate in meters, 0 = invalid
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class InvalidDepthError(ValueError):
    """Raised when a depth value is zero or negative."""


class BehindCameraError(ValueError):
    """Raised when projecting a point with non-positive z."""


# ---------------------------------------------------------------------------
# quaternion helpers (w, x, y, z)

def quat_normalize(q):
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n == 0.0:
        raise ValueError("zero-norm quaternion")
    q = q / n
    # canonical sign: w >= 0 makes pose comparison deterministic
    if q[0] < 0.0:
        q = -q
    return q


def quat_multiply(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conjugate(q):
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_matrix(q):
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(R):
    R = np.asarray(R, dtype=float)
    t = np.trace(R)
    if t > 0.0:
        s = np.sqrt(t + 1.0) * 2.0
        q = np.array([0.25 * s,
                      (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s,
                      (R[1, 0] - R[0, 1]) / s])
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(R[i, i] - R[j, j] - R[k, k] + 1.0) * 2.0
        q = np.empty(4)
        q[0] = (R[k, j] - R[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (R[j, i] + R[i, j]) / s
        q[1 + k] = (R[k, i] + R[i, k]) / s
    return quat_normalize(q)


def quat_from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if n == 0.0:
        return np.array([1.0, 0.0, 0.0, 0.0])
    half = 0.5 * angle
    return quat_normalize(np.concatenate([[np.cos(half)], np.sin(half) * axis / n]))


def quat_rotate(q, v):
    """Rotate vector(s) v by quaternion q. v may be (3,) or (N, 3)."""
    return np.asarray(v, dtype=float) @ quat_to_matrix(q).T


def quat_angle(q):
    """Rotation angle in [0, pi] of a unit quaternion."""
    return 2.0 * np.arccos(np.clip(abs(q[0]), -1.0, 1.0))


def quat_slerp(a, b, t: float):
    """Spherical interpolation from a (t=0) to b (t=1) along the short arc."""
    a = quat_normalize(a)
    b = quat_normalize(b)
    d = float(np.dot(a, b))
    if d < 0.0:
        b = -b
        d = -d
    if d > 0.9995:  # nearly parallel: linear blend avoids a 0/0
        return quat_normalize(a + t * (b - a))
    theta = np.arccos(np.clip(d, -1.0, 1.0))
    return quat_normalize((np.sin((1.0 - t) * theta) * a
                           + np.sin(t * theta) * b) / np.sin(theta))


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Pose3:
    """Rigid transform: p_world = R(quat) @ p_local + position."""

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    quat: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3).copy())
        object.__setattr__(self, "quat", quat_normalize(self.quat))

    @staticmethod
    def identity() -> "Pose3":
        return Pose3()

    @staticmethod
    def from_matrix(T) -> "Pose3":
        T = np.asarray(T, dtype=float)
        return Pose3(T[:3, 3], matrix_to_quat(T[:3, :3]))

    @staticmethod
    def from_rotation(R, t=(0.0, 0.0, 0.0)) -> "Pose3":
        return Pose3(np.asarray(t, dtype=float), matrix_to_quat(R))

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.quat)

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.position
        return T

    def compose(self, other: "Pose3") -> "Pose3":
        return Pose3(self.position + quat_rotate(self.quat, other.position),
                     quat_multiply(self.quat, other.quat))

    def inverse(self) -> "Pose3":
        qinv = quat_conjugate(self.quat)
        return Pose3(-quat_rotate(qinv, self.position), qinv)

    def transform(self, points):
        """Map local point(s) into the parent frame."""
        return quat_rotate(self.quat, points) + self.position

    def transform_direction(self, v):
        return quat_rotate(self.quat, v)

    def z_axis(self) -> np.ndarray:
        return quat_rotate(self.quat, np.array([0.0, 0.0, 1.0]))

    def angle_to(self, other: "Pose3") -> float:
        """Relative rotation angle in radians."""
        return quat_angle(quat_multiply(quat_conjugate(self.quat), other.quat))


def compose_pose(a: Pose3, b: Pose3) -> Pose3:
    return a.compose(b)


def look_at_pose(eye, target, up=(0.0, 0.0, 1.0)) -> Pose3:
    """Camera pose at `eye` with +z pointing at `target` and +y roughly down.

    `up` is the world direction the image top should point away from.
    """
    eye = np.asarray(eye, dtype=float)
    fwd = np.asarray(target, dtype=float) - eye
    n = np.linalg.norm(fwd)
    if n == 0.0:
        raise ValueError("eye and target coincide")
    fwd = fwd / n
    up = np.asarray(up, dtype=float)
    right = np.cross(fwd, up)
    rn = np.linalg.norm(right)
    if rn < 1e-12:  # forward parallel to up, pick an arbitrary right
        right = np.cross(fwd, np.array([1.0, 0.0, 0.0]))
        rn = np.linalg.norm(right)
    right = right / rn
    down = np.cross(fwd, right)
    R = np.column_stack([right, down, fwd])
    return Pose3.from_rotation(R, eye)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside image")


# synthetic depth camera: 640x480 at ~69 deg horizontal FOV, sensible for
# a 0.2-1 m working distance
DEFAULT_INTRINSICS = CameraIntrinsics(fx=460.0, fy=460.0, cx=320.0, cy=240.0,
                                      width=640, height=480)


@dataclass(frozen=True)
class RgbdImage:
    """Color + depth pair. rgb is (H, W, 3) uint8, depth (H, W) meters, 0 = invalid."""

    rgb: np.ndarray
    depth: np.ndarray

    def __post_init__(self):
        rgb = np.asarray(self.rgb, dtype=np.uint8)
        depth = np.asarray(self.depth, dtype=float)
        if rgb.ndim != 3 or rgb.shape[2] != 3:
            raise ValueError("rgb must be (H, W, 3)")
        if depth.shape != rgb.shape[:2]:
            raise ValueError("rgb and depth dimensions differ")
        if np.any(depth < 0):
            raise ValueError("negative depth")
        object.__setattr__(self, "rgb", rgb)
        object.__setattr__(self, "depth", depth)

    @property
    def width(self) -> int:
        return self.rgb.shape[1]

    @property
    def height(self) -> int:
        return self.rgb.shape[0]


def back_project(pixel, depth: float, K: CameraIntrinsics) -> np.ndarray:
    """Camera-frame 3D point for an (u, v) pixel at the given z-depth."""
    if depth <= 0.0:
        raise InvalidDepthError(f"depth must be positive, got {depth}")
    u, v = float(pixel[0]), float(pixel[1])
    if not (0 <= u < K.width and 0 <= v < K.height):
        raise ValueError(f"pixel ({u}, {v}) outside {K.width}x{K.height} image")
    return np.array([(u - K.cx) * depth / K.fx,
                     (v - K.cy) * depth / K.fy,
                     depth])


def back_project_many(us, vs, depths, K: CameraIntrinsics) -> np.ndarray:
    """Vectorized back-projection, no bounds checks. Returns (N, 3)."""
    us = np.asarray(us, dtype=float)
    vs = np.asarray(vs, dtype=float)
    depths = np.asarray(depths, dtype=float)
    return np.stack([(us - K.cx) * depths / K.fx,
                     (vs - K.cy) * depths / K.fy,
                     depths], axis=-1)


def project(point, K: CameraIntrinsics):
    """Pixel coordinates of a camera-frame point. May land outside the image."""
    point = np.asarray(point, dtype=float)
    if point[2] <= 0.0:
        raise BehindCameraError(f"point z must be positive, got {point[2]}")
    return (K.fx * point[0] / point[2] + K.cx,
            K.fy * point[1] / point[2] + K.cy)
