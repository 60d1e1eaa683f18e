"""Analytic RGB-D renderer for the synthetic scenes.

No rasterization library: each primitive is intersected with the pixel rays
inside its projected bounding box and composited through a z-buffer.  Plenty
fast for 640x480 and a handful of primitives, and exact, which matters more
here than shading quality.
"""

from __future__ import annotations

import numpy as np

from ..geometry import DEFAULT_INTRINSICS, Pose3, RgbdImage
from .scene import (CLASS_ANTHER, CLASS_BACKGROUND, CLASS_CANE, CLASS_FLOWER,
                    CLASS_LEAF, NoiseSpec, SceneSpec, noise_preset)

NEAR_PLANE = 0.05


def _pixel_dirs(intrinsics, u0, u1, v0, v1):
    """Unnormalized camera-frame ray directions (z component = 1) for the
    pixel block [v0:v1, u0:u1]."""
    u = (np.arange(u0, u1) + 0.5 - intrinsics.cx) / intrinsics.fx
    v = (np.arange(v0, v1) + 0.5 - intrinsics.cy) / intrinsics.fy
    uu, vv = np.meshgrid(u, v)
    return np.stack([uu, vv, np.ones_like(uu)], axis=-1)


def _project_bbox(points_cam, intrinsics, width, height, pad):
    """Conservative pixel bounding box of camera-frame points, or None."""
    z = points_cam[:, 2]
    if np.all(z <= NEAR_PLANE):
        return None
    if np.any(z <= NEAR_PLANE):
        # straddles the near plane; just scan the full image
        return 0, width, 0, height
    u = intrinsics.fx * points_cam[:, 0] / z + intrinsics.cx
    v = intrinsics.fy * points_cam[:, 1] / z + intrinsics.cy
    u0 = int(np.floor(u.min() - pad))
    u1 = int(np.ceil(u.max() + pad)) + 1
    v0 = int(np.floor(v.min() - pad))
    v1 = int(np.ceil(v.max() + pad)) + 1
    u0, u1 = max(u0, 0), min(u1, width)
    v0, v1 = max(v0, 0), min(v1, height)
    if u0 >= u1 or v0 >= v1:
        return None
    return u0, u1, v0, v1


def _plane_basis(normal):
    ref = np.array([0.0, 0.0, 1.0])
    if abs(normal @ ref) > 0.9:
        ref = np.array([1.0, 0.0, 0.0])
    e1 = np.cross(normal, ref)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(normal, e1)
    return e1, e2


def _splat_disc(zbuf, labels, intrinsics, center, normal, r_major, r_minor,
                class_id):
    """Depth-test an elliptical disc given in camera frame."""
    height, width = zbuf.shape
    e1, e2 = _plane_basis(normal)
    rim = center[None, :] + \
        r_major * np.cos(np.linspace(0, 2 * np.pi, 12, endpoint=False))[:, None] * e1 + \
        r_minor * np.sin(np.linspace(0, 2 * np.pi, 12, endpoint=False))[:, None] * e2
    box = _project_bbox(rim, intrinsics, width, height, pad=2.0)
    if box is None:
        return
    u0, u1, v0, v1 = box
    dirs = _pixel_dirs(intrinsics, u0, u1, v0, v1)
    denom = dirs @ normal
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (center @ normal) / denom
    hit = (np.abs(denom) > 1e-12) & (t > NEAR_PLANE)
    if not hit.any():
        return
    p = t[..., None] * dirs
    rel = p - center
    a = rel @ e1
    b = rel @ e2
    hit &= (a / r_major) ** 2 + (b / r_minor) ** 2 <= 1.0
    hit &= t < zbuf[v0:v1, u0:u1]
    zbuf[v0:v1, u0:u1][hit] = t[hit]
    labels[v0:v1, u0:u1][hit] = class_id


def _splat_cylinder(zbuf, labels, intrinsics, start, end, radius, class_id):
    height, width = zbuf.shape
    axis = end - start
    length = np.linalg.norm(axis)
    if length < 1e-9:
        return
    axis = axis / length
    e1, e2 = _plane_basis(axis)
    ends = np.concatenate([
        start[None, :] + radius * np.array([e1, e2, -e1, -e2]),
        end[None, :] + radius * np.array([e1, e2, -e1, -e2])])
    box = _project_bbox(ends, intrinsics, width, height, pad=2.0)
    if box is None:
        return
    u0, u1, v0, v1 = box
    dirs = _pixel_dirs(intrinsics, u0, u1, v0, v1)
    # ray x(t) = t*d from the camera origin; solve |perp-axis part|^2 = r^2
    m = dirs - (dirs @ axis)[..., None] * axis[None, None, :]
    k = start - (start @ axis) * axis
    qa = np.sum(m * m, axis=-1)
    qb = -2.0 * (m @ k)
    qc = k @ k - radius * radius
    disc = qb * qb - 4.0 * qa * qc
    hit = (disc >= 0.0) & (qa > 1e-18)
    if not hit.any():
        return
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (-qb - np.sqrt(np.maximum(disc, 0.0))) / (2.0 * qa)
    h = (t[..., None] * dirs - start) @ axis
    hit &= (t > NEAR_PLANE) & (h >= 0.0) & (h <= length)
    hit &= t < zbuf[v0:v1, u0:u1]
    zbuf[v0:v1, u0:u1][hit] = t[hit]
    labels[v0:v1, u0:u1][hit] = class_id


def render_labels(scene: SceneSpec, camera_pose: Pose3,
                  intrinsics=None) -> tuple:
    """Noise-free geometry pass: (depth meters, class-id label map)."""
    intrinsics = intrinsics if intrinsics is not None else DEFAULT_INTRINSICS
    width, height = intrinsics.width, intrinsics.height
    zbuf = np.full((height, width), np.inf)
    labels = np.full((height, width), CLASS_BACKGROUND, dtype=np.uint8)
    inv = camera_pose.inverse()
    rot = inv.rotation

    for leaf in scene.leaves:
        _splat_disc(zbuf, labels, intrinsics, inv.transform(leaf.center),
                    rot @ leaf.normal, leaf.axes[0], leaf.axes[1], CLASS_LEAF)
    for cane in scene.canes:
        _splat_cylinder(zbuf, labels, intrinsics, inv.transform(cane.start),
                        inv.transform(cane.end), cane.radius, CLASS_CANE)
    for flower in scene.flowers:
        n_cam = rot @ flower.normal
        _splat_disc(zbuf, labels, intrinsics,
                    inv.transform(flower.position), n_cam,
                    flower.petal_radius, flower.petal_radius, CLASS_FLOWER)
        _splat_disc(zbuf, labels, intrinsics,
                    inv.transform(flower.anther_center()), n_cam,
                    flower.anther_radius, flower.anther_radius, CLASS_ANTHER)

    depth = np.where(np.isfinite(zbuf), zbuf, 0.0)
    return depth, labels


def render_rgbd(scene: SceneSpec, camera_pose: Pose3, intrinsics=None,
                noise: NoiseSpec = None, rng=None,
                with_labels: bool = False):
    """Render one RGB-D frame from `camera_pose` (camera looks along +z).

    Color is a per-pixel Gaussian sample of the class color; depth gets
    range-proportional noise.  Pass `with_labels=True` to also get the
    ground-truth class map (used to mint segmentation training data).
    """
    intrinsics = intrinsics if intrinsics is not None else DEFAULT_INTRINSICS
    if noise is None:
        noise = noise_preset("off")
    if rng is None:
        rng = np.random.default_rng(0)

    depth, labels = render_labels(scene, camera_pose, intrinsics)

    means = np.zeros((256, 3))
    sigmas = np.zeros((256, 3))
    for class_id, cc in scene.colors.items():
        means[class_id] = cc.mean
        sigmas[class_id] = cc.sigma * noise.color_sigma_scale
    rgb = means[labels]
    if noise.color_sigma_scale > 0.0:
        rgb = rgb + sigmas[labels] * rng.standard_normal(rgb.shape)
    rgb = np.clip(np.rint(rgb), 0, 255).astype(np.uint8)

    if noise.depth_sigma > 0.0:
        jitter = rng.standard_normal(depth.shape)
        depth = np.where(depth > 0.0,
                         depth + jitter * (noise.depth_sigma * depth / 0.4),
                         0.0)
        depth = np.maximum(depth, 0.0)

    image = RgbdImage(rgb=rgb, depth=depth.astype(np.float32))
    if with_labels:
        return image, labels
    return image
