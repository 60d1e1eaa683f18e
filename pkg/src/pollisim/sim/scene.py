"""Synthetic bramble-bush scenes for desk-scale trials.

A scene is a bag of simple primitives: flowers are flat discs with a smaller
warm-colored anther disc floating just in front of the petal plane, leaves
are elliptical discs, canes are cylinder segments.  Eight scenario templates
vary the number of reachable flowers and clutter; generation is fully
deterministic in the seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..classify import ORIENTATION_YAW, OrientationClass

# render/label class ids
CLASS_BACKGROUND = 0
CLASS_FLOWER = 1
CLASS_LEAF = 2
CLASS_CANE = 3
CLASS_ANTHER = 4

# reachable flower count and trial count per scenario template (1-based)
SCENARIO_REACHABLE = (3, 3, 2, 2, 2, 4, 4, 4)
SCENARIO_TRIALS = (5, 5, 6, 6, 5, 7, 7, 6)

WORKSPACE_LIMIT = 1.5  # all geometry must fit in this box around the base

DEFAULT_PETAL_RADIUS = 0.025
DEFAULT_ANTHER_RADIUS = 0.008
# the anther sits slightly proud of the petal plane, which is what makes
# left/right-facing flowers distinguishable in the image
ANTHER_OFFSET = 0.005


@dataclass
class FlowerSpec:
    position: np.ndarray
    normal: np.ndarray
    petal_radius: float = DEFAULT_PETAL_RADIUS
    anther_radius: float = DEFAULT_ANTHER_RADIUS
    orientation: OrientationClass = OrientationClass.FACING_CAMERA

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        n = np.asarray(self.normal, dtype=float)
        self.normal = n / np.linalg.norm(n)
        if self.anther_radius >= self.petal_radius:
            raise ValueError("anther radius must be smaller than petal radius")

    def anther_center(self) -> np.ndarray:
        return self.position + ANTHER_OFFSET * self.normal


@dataclass
class LeafSpec:
    center: np.ndarray
    axes: tuple  # (semi-major, semi-minor) meters
    normal: np.ndarray

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        n = np.asarray(self.normal, dtype=float)
        self.normal = n / np.linalg.norm(n)


@dataclass
class CaneSpec:
    start: np.ndarray
    end: np.ndarray
    radius: float = 0.006

    def __post_init__(self):
        self.start = np.asarray(self.start, dtype=float)
        self.end = np.asarray(self.end, dtype=float)


@dataclass
class ClassColors:
    mean: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)


def default_class_colors() -> dict:
    return {
        CLASS_BACKGROUND: ClassColors((30.0, 34.0, 38.0), (6.0, 6.0, 6.0)),
        CLASS_FLOWER: ClassColors((245.0, 240.0, 245.0), (8.0, 8.0, 8.0)),
        CLASS_LEAF: ClassColors((60.0, 140.0, 70.0), (12.0, 12.0, 12.0)),
        CLASS_CANE: ClassColors((110.0, 80.0, 50.0), (10.0, 10.0, 10.0)),
        CLASS_ANTHER: ClassColors((230.0, 200.0, 60.0), (10.0, 10.0, 10.0)),
    }


@dataclass
class SceneSpec:
    flowers: list = field(default_factory=list)
    leaves: list = field(default_factory=list)
    canes: list = field(default_factory=list)
    colors: dict = field(default_factory=default_class_colors)
    seed: int = 0

    def __post_init__(self):
        for f in self.flowers:
            if np.any(np.abs(f.position) > WORKSPACE_LIMIT):
                raise ValueError("flower outside the workspace box")
        for l in self.leaves:
            if np.any(np.abs(l.center) > WORKSPACE_LIMIT):
                raise ValueError("leaf outside the workspace box")
        for c in self.canes:
            if np.any(np.abs(c.start) > WORKSPACE_LIMIT) or \
                    np.any(np.abs(c.end) > WORKSPACE_LIMIT):
                raise ValueError("cane outside the workspace box")

    def reachable_flowers(self, base_position=(0.0, 0.0, 0.0),
                          reach: float = 0.7) -> list:
        base = np.asarray(base_position, dtype=float)
        return [f for f in self.flowers
                if np.linalg.norm(f.position - base) <= reach]


@dataclass
class NoiseSpec:
    """Knobs for every injected error source (all off = ideal sensors)."""
    depth_sigma: float = 0.002        # meters at 0.4 m range, grows linearly
    position_sigma: float = 0.004     # pose-observation noise at 0.4 m range
    color_sigma_scale: float = 1.0    # multiplies the scene's color sigmas
    # row-stochastic P(observed class | true class)
    orientation_confusion: np.ndarray = field(
        default_factory=lambda: np.array([[0.90, 0.05, 0.05],
                                          [0.06, 0.88, 0.06],
                                          [0.06, 0.06, 0.88]]))

    def __post_init__(self):
        self.orientation_confusion = np.asarray(self.orientation_confusion,
                                                dtype=float)
        if self.orientation_confusion.shape != (3, 3) or \
                not np.allclose(self.orientation_confusion.sum(axis=1), 1.0):
            raise ValueError("confusion matrix rows must sum to one")

    def position_sigma_at(self, rng_range: float) -> float:
        """Observation noise grows with range like depth error does."""
        return self.position_sigma * max(rng_range, 0.05) / 0.4


def noise_preset(name: str) -> NoiseSpec:
    if name == "off":
        return NoiseSpec(depth_sigma=0.0, position_sigma=0.0,
                         color_sigma_scale=0.0,
                         orientation_confusion=np.eye(3))
    if name == "low":
        return NoiseSpec(depth_sigma=0.001, position_sigma=0.002,
                         color_sigma_scale=0.5,
                         orientation_confusion=np.array(
                             [[0.96, 0.02, 0.02],
                              [0.03, 0.94, 0.03],
                              [0.03, 0.03, 0.94]]))
    if name == "default":
        return NoiseSpec()
    raise ValueError(f"unknown noise preset {name!r} (want off/low/default)")


def _flower_normal(orientation: OrientationClass, jitter: float,
                   rng: np.random.Generator) -> np.ndarray:
    """Unit normal: the robot-facing direction (-x) rotated about vertical by
    the class yaw plus a small jitter."""
    yaw = {OrientationClass.FACING_CAMERA: 0.0,
           OrientationClass.FACING_LEFT: ORIENTATION_YAW,
           OrientationClass.FACING_RIGHT: -ORIENTATION_YAW}[orientation]
    yaw = yaw + rng.uniform(-jitter, jitter)
    # proper z rotation of (-1, 0, 0) so the class yaw composes the same way
    # the mapper reconstructs it from a view direction
    return np.array([-np.cos(yaw), -np.sin(yaw), 0.0])


def generate_scene(scenario: int, seed: int = 0) -> SceneSpec:
    """Deterministic scene for one of the eight scenario templates.

    Scenario 0 is an intentionally empty scene; 1-8 place the template's
    reachable flower count in front of the arm with leaf/cane clutter set
    behind the flower plane so the mapping sweep keeps lines of sight.
    """
    if not (0 <= scenario <= len(SCENARIO_REACHABLE)):
        raise ValueError(f"scenario must be 0..{len(SCENARIO_REACHABLE)}, got {scenario}")
    rng = np.random.default_rng(np.random.SeedSequence([scenario, seed]))
    scene = SceneSpec(seed=seed)
    if scenario == 0:
        return scene

    n_flowers = SCENARIO_REACHABLE[scenario - 1]
    # orientation mix: roughly half face the robot, the rest split left/right
    classes = [OrientationClass.FACING_CAMERA, OrientationClass.FACING_LEFT,
               OrientationClass.FACING_RIGHT, OrientationClass.FACING_CAMERA]
    positions = []
    attempts = 0
    while len(positions) < n_flowers and attempts < 1000:
        attempts += 1
        cand = np.array([rng.uniform(0.40, 0.56),
                         rng.uniform(-0.15, 0.15),
                         rng.uniform(0.26, 0.44)])
        # leave reach margin so the whole approach stays inside the 0.7 m
        # task-space limit
        if np.linalg.norm(cand) > 0.66:
            continue
        if positions and min(np.linalg.norm(cand - p) for p in positions) < 0.09:
            continue
        positions.append(cand)
    for i, pos in enumerate(positions):
        cls = classes[(i + scenario) % len(classes)]
        scene.flowers.append(FlowerSpec(
            position=pos,
            normal=_flower_normal(cls, np.deg2rad(3.0), rng),
            orientation=cls))

    # one out-of-reach flower in the busier templates exercises the
    # reach-exclusion path without affecting the reachable count
    if scenario >= 6:
        scene.flowers.append(FlowerSpec(
            position=np.array([0.85, rng.uniform(-0.1, 0.1), 0.45]),
            normal=_flower_normal(OrientationClass.FACING_CAMERA,
                                  np.deg2rad(3.0), rng),
            orientation=OrientationClass.FACING_CAMERA))

    # clutter sits behind the flower plane (larger x) so the sweep arc,
    # which looks from smaller x, keeps the flowers unoccluded
    n_canes = 2 + scenario % 2
    for _ in range(n_canes):
        x = rng.uniform(0.62, 0.70)
        y = rng.uniform(-0.25, 0.25)
        scene.canes.append(CaneSpec(
            start=np.array([x, y, 0.05]),
            end=np.array([x + rng.uniform(-0.03, 0.03),
                          y + rng.uniform(-0.05, 0.05), 0.70]),
            radius=0.006))
    n_leaves = 4 + scenario % 3
    for _ in range(n_leaves):
        scene.leaves.append(LeafSpec(
            center=np.array([rng.uniform(0.60, 0.72),
                             rng.uniform(-0.28, 0.28),
                             rng.uniform(0.18, 0.58)]),
            axes=(rng.uniform(0.03, 0.05), rng.uniform(0.018, 0.03)),
            normal=np.array([-1.0, rng.uniform(-0.4, 0.4),
                             rng.uniform(-0.4, 0.4)])))
    return scene
