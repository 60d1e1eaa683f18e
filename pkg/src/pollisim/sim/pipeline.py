"""End-to-end trial pipeline: train models, map the workspace, tour the
flowers, servo in, rub the plate, and score the attempt against ground truth.

The trial driver is a small finite-state machine; states mirror the stages a
real system would sequence through and every transition is recorded for
telemetry.  All randomness flows from one generator per trial, so a trial is
a pure function of (scenario, seed, config).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from ..classify import (LinearPatchClassifier, OrientationClass,
                        classify_orientation, classify_patch,
                        extract_patch_features, load_classifier,
                        save_classifier, train_reference_classifier)
from ..config import PipelineConfig
from ..end_effector import (HandEyeLUT, ParallelPlatform, build_ik_lut,
                            platform_forward_pose)
from ..flower_map import (NUM_ORIENTATION_CLASSES, AssociationGate, FlowerMap,
                          flower_pose)
from ..geometry import (DEFAULT_INTRINSICS, Pose3, back_project, look_at_pose)
from ..kinematics import (SerialArmModel, default_arm_model,
                          forward_kinematics, jacobian)
from ..octree import OccupancyOctree
from ..planning import (NoPathError, VantagePoint, build_cost_matrix,
                        generate_vantage_points, plan_point_to_point,
                        solve_tsp)
from ..segmentation import (ColorHistogramModel, ColorLUT, build_lut,
                            extract_patches, load_color_model, load_lut,
                            save_color_model, save_lut, segment_image,
                            train_color_model)
from ..servoing import ServoParams, ServoPhase, pollinate, run_servo
from .render import render_rgbd
from .scene import (CLASS_ANTHER, CLASS_CANE, CLASS_FLOWER, CLASS_LEAF,
                    SCENARIO_TRIALS, CaneSpec, FlowerSpec, LeafSpec,
                    NoiseSpec, SceneSpec, _flower_normal, generate_scene,
                    noise_preset)

_UNIFORM_ORIENTATION = np.full(NUM_ORIENTATION_CLASSES,
                               1.0 / NUM_ORIENTATION_CLASSES)


# ---------------------------------------------------------------------------
# model training


@dataclass
class ModelBundle:
    color_model: ColorHistogramModel
    lut: ColorLUT
    patch_classifier: LinearPatchClassifier
    orientation_classifier: LinearPatchClassifier


_MODEL_FILES = ("color_model.bin", "lut.bin", "patch_classifier.bin",
                "orientation_classifier.bin")


def save_models(models: ModelBundle, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_color_model(models.color_model, d / _MODEL_FILES[0])
    save_lut(models.lut, d / _MODEL_FILES[1])
    save_classifier(models.patch_classifier, d / _MODEL_FILES[2])
    save_classifier(models.orientation_classifier, d / _MODEL_FILES[3])


def load_models(directory) -> ModelBundle:
    d = Path(directory)
    return ModelBundle(
        color_model=load_color_model(d / _MODEL_FILES[0]),
        lut=load_lut(d / _MODEL_FILES[1]),
        patch_classifier=load_classifier(d / _MODEL_FILES[2]),
        orientation_classifier=load_classifier(d / _MODEL_FILES[3]))


def _training_scene(cls: OrientationClass, rng) -> SceneSpec:
    """Single labeled flower plus nearby clutter for classifier training."""
    scene = SceneSpec()
    pos = np.array([rng.uniform(0.40, 0.56), rng.uniform(-0.15, 0.15),
                    rng.uniform(0.26, 0.44)])
    scene.flowers.append(FlowerSpec(
        position=pos, normal=_flower_normal(cls, np.deg2rad(3.0), rng),
        orientation=cls))
    scene.leaves.append(LeafSpec(
        center=pos + np.array([rng.uniform(0.10, 0.18),
                               rng.uniform(-0.12, 0.12),
                               rng.uniform(-0.10, 0.10)]),
        axes=(rng.uniform(0.03, 0.05), rng.uniform(0.018, 0.03)),
        normal=np.array([-1.0, rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4)])))
    x = pos[0] + rng.uniform(0.08, 0.15)
    y = pos[1] + rng.uniform(-0.15, 0.15)
    scene.canes.append(CaneSpec(start=np.array([x, y, 0.05]),
                                end=np.array([x, y, 0.70])))
    return scene


def _training_camera(flower_pos, rng) -> Pose3:
    """Viewpoint drawn from the same arc geometry the mapping sweep uses."""
    az = np.deg2rad(rng.uniform(-40.0, 40.0))
    el = np.deg2rad(rng.uniform(5.0, 30.0))
    radius = rng.uniform(0.16, 0.55)
    d = np.array([-np.cos(el) * np.cos(az), np.cos(el) * np.sin(az),
                  np.sin(el)])
    eye = flower_pos + radius * d
    target = flower_pos + rng.uniform(-0.01, 0.01, 3)
    return look_at_pose(eye, target)


def train_perception_models(config: PipelineConfig | None = None) -> ModelBundle:
    """Mint a labeled synthetic training set and fit all three models.

    Deterministic in config.training_seed and independent of trial seeds, so
    a campaign trains once and reuses the bundle everywhere.
    """
    config = config if config is not None else PipelineConfig()
    noise = noise_preset(config.noise)
    K = DEFAULT_INTRINSICS

    color_pairs = []
    patch_X, patch_y = [], []
    orient_X, orient_y = [], []
    for cls in (OrientationClass.FACING_CAMERA, OrientationClass.FACING_LEFT,
                OrientationClass.FACING_RIGHT):
        for k in range(config.training_samples_per_class):
            rng = np.random.default_rng(
                np.random.SeedSequence([config.training_seed, int(cls), k]))
            scene = _training_scene(cls, rng)
            cam = _training_camera(scene.flowers[0].position, rng)
            image, labels = render_rgbd(scene, cam, K, noise=noise, rng=rng,
                                        with_labels=True)
            flower_mask = (labels == CLASS_FLOWER) | (labels == CLASS_ANTHER)
            color_pairs.append((image.rgb, flower_mask))

            patches = extract_patches(flower_mask, config.min_patch_area,
                                      config.patch_inflation)
            if patches:
                feats = extract_patch_features(image, patches[0])
                patch_X.append(feats)
                patch_y.append(1)
                orient_X.append(feats)
                orient_y.append(int(cls))
            distractor_mask = (labels == CLASS_LEAF) | (labels == CLASS_CANE)
            for p in extract_patches(distractor_mask, config.min_patch_area,
                                     config.patch_inflation)[:2]:
                patch_X.append(extract_patch_features(image, p))
                patch_y.append(0)

    color_model = train_color_model(color_pairs,
                                    smoothing=config.color_smoothing)
    lut = build_lut(color_model, bits_per_channel=config.lut_bits)
    patch_clf = train_reference_classifier(
        (np.array(patch_X), np.array(patch_y)), seed=config.training_seed,
        num_classes=2)
    orient_clf = train_reference_classifier(
        (np.array(orient_X), np.array(orient_y)),
        seed=config.training_seed + 1, num_classes=3)
    return ModelBundle(color_model=color_model, lut=lut,
                       patch_classifier=patch_clf,
                       orientation_classifier=orient_clf)


# ---------------------------------------------------------------------------
# mapping


def sweep_poses(config: PipelineConfig | None = None) -> list:
    """The predefined mapping arc: azimuth fan at each elevation, all looking
    at the plant center."""
    config = config if config is not None else PipelineConfig()
    center = np.asarray(config.sweep_center, dtype=float)
    span = np.deg2rad(config.sweep_azimuth_span_deg)
    poses = []
    for el_deg in config.sweep_elevations_deg:
        el = np.deg2rad(el_deg)
        for az in np.linspace(-span, span, config.sweep_azimuth_count):
            d = np.array([-np.cos(el) * np.cos(az), np.cos(el) * np.sin(az),
                          np.sin(el)])
            poses.append(look_at_pose(center + config.sweep_radius * d, center))
    return poses


@dataclass
class Observation:
    position: np.ndarray      # world frame, meters
    sigma: float              # isotropic position std assumed by the fuser
    orientation_dist: np.ndarray
    area: int


def _masked_point(image, patch, mask, cam_pose: Pose3, K):
    """World point for the selected patch pixels: centroid + median depth."""
    vs, us = np.nonzero(mask)
    depths = image.depth[patch.y0:patch.y1, patch.x0:patch.x1][vs, us]
    valid = depths > 0
    if valid.sum() < 5:
        return None
    z = float(np.median(depths[valid]))
    u = float(us[valid].mean()) + patch.x0
    v = float(vs[valid].mean()) + patch.y0
    return cam_pose.transform(back_project((u, v), z, K)), z


# class yaw centers for the geometric orientation vote, indexed by class id
_CLASS_YAWS = np.array([0.0, 30.0, -30.0])
_YAW_VOTE_SIGMA = 15.0  # degrees


def _orientation_vote(anther_point, petal_point) -> np.ndarray:
    """Soft class distribution from the anther's offset off the petal plane.

    The anther disc floats in front of the petals, so the world-frame vector
    between the two back-projected centroids measures the flower normal
    directly; its horizontal yaw votes for the nearest orientation classes.
    A single-view learned classifier cannot do this job here: apparent yaw
    confounds true yaw with camera azimuth across the mapping arc.
    """
    d = np.asarray(anther_point) - np.asarray(petal_point)
    d[2] = 0.0
    n = float(np.linalg.norm(d))
    if n < 1e-4:  # head-on view, no lateral lever arm
        return _UNIFORM_ORIENTATION
    yaw = np.degrees(np.arctan2(-d[1], -d[0]))
    w = np.exp(-0.5 * ((yaw - _CLASS_YAWS) / _YAW_VOTE_SIGMA) ** 2) + 1e-6
    return w / w.sum()


def perceive_frame(image, cam_pose: Pose3, models: ModelBundle,
                   noise: NoiseSpec, config: PipelineConfig,
                   K=DEFAULT_INTRINSICS) -> list:
    """Segmentation -> patches -> classification -> back-projection.

    The position estimate prefers the warm (anther) pixel centroid, which is
    the actual pollination target; the whole-patch centroid is the fallback
    when too few anther pixels survive segmentation.
    """
    seg = segment_image(models.lut, image)
    observations = []
    for patch in extract_patches(seg == 1, config.min_patch_area,
                                 config.patch_inflation):
        label, p = classify_patch(models.patch_classifier, image, patch)
        if label != 1 or p < config.patch_accept_threshold:
            continue
        box_rgb = image.rgb[patch.y0:patch.y1, patch.x0:patch.x1].astype(float)
        warm = (box_rgb[:, :, 0] - box_rgb[:, :, 2]
                > config.warm_pixel_threshold) & patch.mask
        full = _masked_point(image, patch, patch.mask, cam_pose, K)
        if full is None:
            continue
        orient_dist = _UNIFORM_ORIENTATION
        if warm.sum() >= 10:
            anther = _masked_point(image, patch, warm, cam_pose, K)
            if anther is not None:
                position, z = anther
                orient_dist = _orientation_vote(position, full[0])
            else:
                position, z = full
        else:
            position, z = full
        sigma = max(noise.position_sigma_at(z), config.observation_sigma_floor)
        observations.append(Observation(position=position, sigma=sigma,
                                        orientation_dist=orient_dist,
                                        area=patch.area))
    return observations


def run_mapping_sweep(scene: SceneSpec, poses, models: ModelBundle,
                      noise: NoiseSpec, rng, config: PipelineConfig | None = None,
                      K=DEFAULT_INTRINSICS):
    """Render/insert/detect at every pose; returns (octree, flower map,
    detections-per-pose)."""
    config = config if config is not None else PipelineConfig()
    if not poses:
        raise ValueError("need at least one mapping pose")
    octree = OccupancyOctree(
        resolution=config.map_resolution, levels=config.map_levels,
        hit_logodds=config.map_hit_logodds,
        miss_logodds=config.map_miss_logodds,
        clamp=(config.map_clamp_min, config.map_clamp_max),
        occupancy_threshold=config.map_occupancy_threshold)
    fmap = FlowerMap(AssociationGate(config.mahalanobis_gate,
                                     config.new_track_distance),
                     min_observations=config.min_observations)
    counts = []
    for pose in poses:
        image = render_rgbd(scene, pose, K, noise=noise, rng=rng)
        octree.insert_depth_scan(pose, image, K, config.map_max_range,
                                 pixel_stride=config.map_pixel_stride)
        obs = perceive_frame(image, pose, models, noise, config, K)
        for o in obs:
            # orientation votes are world-frame (geometric), so tracks keep
            # the frontal default view axis instead of blending camera rays
            fmap.observe(o.position, o.sigma ** 2 * np.eye(3),
                         o.orientation_dist)
        counts.append(len(obs))
    return octree, fmap, counts


def track_target_pose(track, config: PipelineConfig) -> Pose3:
    """Pose the pipeline servos toward: track position, normal taken from the
    horizontal projection of the mean view direction plus the class yaw.

    The stand-in plant grows flowers facing outward in the horizontal plane,
    so flattening the view direction removes the elevation the sweep arc
    bakes into it.
    """
    view = np.asarray(track.view_direction, dtype=float) * np.array([1.0, 1.0, 0.0])
    n = float(np.linalg.norm(view))
    view = view / n if n > 1e-9 else np.array([-1.0, 0.0, 0.0])
    return flower_pose(track.position, view, track.orientation_class)


# ---------------------------------------------------------------------------
# inverse kinematics (damped least squares on the full pose error)


def _rotation_error(R_target: np.ndarray, R_current: np.ndarray) -> np.ndarray:
    R = R_target @ R_current.T
    cos = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    angle = float(np.arccos(cos))
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if angle < 1e-9:
        return 0.5 * w
    s = np.sin(angle)
    if abs(s) < 1e-9:  # near pi: fall back to the dominant axis
        axis = np.sqrt(np.maximum(np.diag(R) * 0.5 + 0.5, 0.0))
        axis *= np.where(w >= 0, 1.0, -1.0)
        nrm = np.linalg.norm(axis)
        return angle * axis / nrm if nrm > 1e-12 else np.zeros(3)
    return angle / (2.0 * s) * w


def solve_tool_ik(arm: SerialArmModel, target: Pose3, q0,
                  max_iterations: int = 200, position_tol: float = 1e-4,
                  rotation_tol: float = 2e-3, damping: float = 1e-4,
                  step_limit: float = 0.25):
    """Damped least-squares IK; returns (q, converged)."""
    q = arm.clamp_to_limits(np.asarray(q0, dtype=float))
    Rt = target.rotation
    for _ in range(max_iterations):
        pose = forward_kinematics(arm, q)
        p_err = target.position - pose.position
        w_err = _rotation_error(Rt, pose.rotation)
        if np.linalg.norm(p_err) < position_tol and \
                np.linalg.norm(w_err) < rotation_tol:
            return q, True
        err = np.concatenate([p_err, w_err])
        J = jacobian(arm, q)
        dq = J.T @ np.linalg.solve(J @ J.T + damping * np.eye(6), err)
        peak = np.max(np.abs(dq))
        if peak > step_limit:
            dq *= step_limit / peak
        q = arm.clamp_to_limits(q + dq)
    return q, False


def _ik_with_retries(arm, target, seeds):
    for q0 in seeds:
        q, ok = solve_tool_ik(arm, target, q0)
        if ok:
            return q, True
    return np.asarray(seeds[0], dtype=float), False


# ---------------------------------------------------------------------------
# trial state machine


class FsmState(Enum):
    IDLE = "idle"
    MAP_WORKSPACE = "map_workspace"
    PLAN_TOUR = "plan_tour"
    MOVE_TO_VANTAGE = "move_to_vantage"
    REFINE_POSE = "refine_pose"
    SERVO_ALIGN = "servo_align"
    SERVO_APPROACH = "servo_approach"
    POLLINATE = "pollinate"
    NEXT_FLOWER = "next_flower"
    DONE = "done"


@dataclass
class AttemptResult:
    track_id: int
    flower_index: int          # ground-truth flower index, -1 when unmatched
    planned: bool
    servo_phase: str
    servo_steps: int
    touched: bool
    pollinated: bool
    orientation_ok: bool
    miss_distance: float       # closest plate approach to the true anther, m
    servo_rows: list = field(default_factory=list)


@dataclass
class TrialResult:
    scenario: int
    trial: int
    seed: int
    reachable: int
    seen: int
    confirmed: int
    false_positives: int
    attempts: list = field(default_factory=list)
    events: list = field(default_factory=list)
    detections_per_pose: list = field(default_factory=list)

    @property
    def attempted(self) -> int:
        """Attempts where the approach actually ran (planning and IK both
        succeeded); only these count toward touched/missed percentages."""
        return sum(1 for a in self.attempts
                   if a.planned and a.servo_phase != "ik_failed")

    @property
    def touched(self) -> int:
        return sum(1 for a in self.attempts if a.touched)

    @property
    def pollinated(self) -> int:
        return sum(1 for a in self.attempts if a.pollinated)


def match_tracks_to_flowers(tracks, scene: SceneSpec,
                            config: PipelineConfig):
    """Greedy nearest-first matching of confirmed tracks to true flowers.

    Returns (track-id -> flower-index for matched, false-positive ids, seen
    count) where seen counts matches to flowers inside the reach limit.
    """
    remaining = {i: f.anther_center() for i, f in enumerate(scene.flowers)}
    matched = {}
    fps = []
    for track in sorted(tracks, key=lambda t: t.id):
        best, best_d = None, config.detection_match_distance
        for i, p in remaining.items():
            d = float(np.linalg.norm(track.position - p))
            if d <= best_d:
                best, best_d = i, d
        if best is None:
            fps.append(track.id)
        else:
            matched[track.id] = best
            del remaining[best]
    reach = config.reach_limit
    seen = sum(1 for fi in matched.values()
               if np.linalg.norm(scene.flowers[fi].position) <= reach)
    return matched, fps, seen


def _score_attempt(trace, tip_pose: Pose3, platform: ParallelPlatform,
                   flower: FlowerSpec | None, config: PipelineConfig):
    """(touched, pollinated, orientation_ok, miss_distance) for one rub."""
    if flower is None:
        return False, False, False, float("inf")
    n = flower.normal
    anther = flower.anther_center()
    pts = np.asarray(trace.world_points, dtype=float)

    rel_a = pts - anther
    ax_a = rel_a @ n
    lat_a = np.linalg.norm(rel_a - ax_a[:, None] * n[None, :], axis=1)
    rel_p = pts - flower.position
    ax_p = rel_p @ n
    lat_p = np.linalg.norm(rel_p - ax_p[:, None] * n[None, :], axis=1)

    touched = bool(np.any((np.abs(ax_p) <= config.touch_axial_tolerance)
                          & (lat_p <= flower.petal_radius)))
    hit_anther = bool(np.any((np.abs(ax_a) <= config.pollinate_axial_tolerance)
                             & (lat_a <= flower.anther_radius)))
    plate_z = tip_pose.transform_direction(
        platform_forward_pose(platform, trace.align_command).z_axis())
    tilt = float(np.degrees(np.arccos(np.clip(plate_z @ -n, -1.0, 1.0))))
    orientation_ok = tilt <= config.pollinate_tilt_tolerance_deg
    pollinated = touched and hit_anther and orientation_ok
    miss = float(np.min(np.linalg.norm(rel_a, axis=1)))
    return touched, pollinated, orientation_ok, miss


def _min_tip_distance(arm, rows, point) -> float:
    """Closest tip approach to a world point over servo telemetry."""
    best = float("inf")
    for _, _, _, _, q in rows:
        try:
            d = float(np.linalg.norm(
                forward_kinematics(arm, q).position - point))
        except Exception:
            continue
        best = min(best, d)
    return best


def _clear_vantage(vantage, occupied, config):
    """Slide a vantage outward along its approach axis until it clears the
    mapped obstacles by a margin, so the goal is plannable.  ``occupied`` is
    the (N, 3) array of occupied leaf centers."""
    pos = np.asarray(vantage.pose.position, dtype=float)
    fpos = np.asarray(vantage.flower_position, dtype=float)
    away = pos - fpos
    norm = np.linalg.norm(away)
    if norm < 1e-9 or len(occupied) == 0:
        return vantage
    away = away / norm
    want = config.clearance_radius + 0.02
    best_pos, best_clear = pos, -1.0
    for k in range(6):
        cand = pos + 0.02 * k * away
        clear = float(np.linalg.norm(occupied - cand, axis=1).min())
        if clear >= want:
            best_pos, best_clear = cand, clear
            break
        if clear > best_clear:
            best_pos, best_clear = cand, clear
    if np.allclose(best_pos, pos):
        return vantage
    return VantagePoint(flower_id=vantage.flower_id,
                        pose=look_at_pose(best_pos, fpos),
                        flower_position=fpos)


def run_fsm(scene: SceneSpec, config: PipelineConfig | None = None,
            rng=None, models: ModelBundle | None = None,
            arm: SerialArmModel | None = None,
            effector_lut: HandEyeLUT | None = None,
            scenario: int = 0, trial: int = 0, seed: int = 0) -> TrialResult:
    """One complete trial; never raises on per-flower failures."""
    config = config if config is not None else PipelineConfig()
    rng = rng if rng is not None else np.random.default_rng(seed)
    models = models if models is not None else train_perception_models(config)
    arm = arm if arm is not None else default_arm_model()
    platform = ParallelPlatform(radius=config.platform_radius,
                                stroke=(config.stroke_min, config.stroke_max))
    if effector_lut is None:
        effector_lut = build_ik_lut(platform, config.ik_lut_step)
    noise = noise_preset(config.noise)
    K = DEFAULT_INTRINSICS
    params = ServoParams(
        parallel_threshold=config.servo_parallel_threshold,
        contact_distance=config.servo_contact_distance,
        velocity_norm=config.servo_velocity_norm, dt=config.servo_dt,
        condition_threshold=config.servo_condition_threshold,
        blind_trigger=config.servo_blind_trigger,
        max_steps=config.servo_max_steps)
    plan_kw = dict(radius=config.clearance_radius, step=config.path_step,
                   sample_budget=config.rrt_sample_budget,
                   goal_bias=config.rrt_goal_bias,
                   shortcut_passes=config.rrt_shortcut_passes,
                   sample_margin=config.rrt_sample_margin)
    # the plate center sits this far out along the tool axis at mid-stroke;
    # aiming the tip short by the same amount puts the plate on the flower
    mid = 0.5 * (config.stroke_min + config.stroke_max)
    plate_offset = float(platform_forward_pose(platform,
                                               np.full(3, mid)).position[2])
    standback = plate_offset - config.servo_contact_distance

    result = TrialResult(scenario=scenario, trial=trial, seed=seed,
                         reachable=len(scene.reachable_flowers(
                             reach=config.reach_limit)),
                         seen=0, confirmed=0, false_positives=0)
    events = result.events
    events.append((FsmState.IDLE, ""))

    q = np.asarray(config.home_q, dtype=float)
    events.append((FsmState.MAP_WORKSPACE, f"poses={len(sweep_poses(config))}"))
    octree, fmap, counts = run_mapping_sweep(scene, sweep_poses(config),
                                             models, noise, rng, config, K)
    result.detections_per_pose = counts

    tracks = fmap.confirmed_tracks()
    targets = [(t.id, track_target_pose(t, config), t.position)
               for t in sorted(tracks, key=lambda t: t.id)]
    vantages, skipped = generate_vantage_points(
        targets, standoff=config.vantage_standoff,
        reach_limit=config.reach_limit)
    events.append((FsmState.PLAN_TOUR,
                   f"tracks={len(tracks)} vantages={len(vantages)} "
                   f"skipped={len(skipped)}"))

    order = []
    tip_pose = forward_kinematics(arm, q)
    if vantages:
        occupied = octree.occupied_leaf_centers()
        vantages = [_clear_vantage(v, occupied, config) for v in vantages]
        nodes = [VantagePoint(flower_id=-1, pose=tip_pose,
                              flower_position=tip_pose.position)] + vantages
        costs = build_cost_matrix(nodes, octree, seed=seed, **plan_kw)
        # blocked pairs only demote a leg in the ordering; the actual legs
        # are replanned from the live tip pose anyway
        finite = costs[np.isfinite(costs)]
        penalty = 10.0 * float(finite.max()) + 1.0 if finite.size else 1.0
        costs[~np.isfinite(costs)] = penalty
        tour = solve_tsp(costs, start_index=0)
        order = [nodes[i] for i in tour.order[1:]]

    track_by_id = {t.id: t for t in fmap.tracks}
    for vantage in order:
        track = track_by_id[vantage.flower_id]
        events.append((FsmState.MOVE_TO_VANTAGE, f"track={track.id}"))
        attempt = AttemptResult(track_id=track.id, flower_index=-1,
                                planned=False, servo_phase="", servo_steps=0,
                                touched=False, pollinated=False,
                                orientation_ok=False,
                                miss_distance=float("inf"))
        result.attempts.append(attempt)

        # nearest true flower is what the simulated camera actually sees
        flower = None
        if scene.flowers:
            dists = [float(np.linalg.norm(track.position - f.anther_center()))
                     for f in scene.flowers]
            i = int(np.argmin(dists))
            if dists[i] <= 2.0 * config.new_track_distance:
                flower = scene.flowers[i]
                attempt.flower_index = i

        try:
            plan_point_to_point(tip_pose, vantage.pose, octree,
                                seed=seed + 17 * track.id, **plan_kw)
        except (NoPathError, ValueError):
            attempt.servo_phase = "plan_failed"
            events.append((FsmState.NEXT_FLOWER, "plan failed"))
            continue
        attempt.planned = True
        home = np.asarray(config.home_q, dtype=float)
        q_v, ok = _ik_with_retries(
            arm, vantage.pose,
            [q, home, home + np.array([0.3, -0.2, 0.3, 0.2, -0.2, -0.4])])
        if not ok:
            attempt.servo_phase = "ik_failed"
            events.append((FsmState.NEXT_FLOWER, "ik failed"))
            continue
        q = q_v
        tip_pose = forward_kinematics(arm, q)

        events.append((FsmState.REFINE_POSE, f"views={config.refine_views}"))
        for j in range(config.refine_views):
            lateral = tip_pose.rotation[:, 0]
            offset = (j - (config.refine_views - 1) / 2.0) * config.refine_offset
            cam = Pose3(vantage.pose.position + offset * lateral,
                        vantage.pose.quat)
            image = render_rgbd(scene, cam, K, noise=noise, rng=rng)
            for o in perceive_frame(image, cam, models, noise, config, K):
                # orientation stays sweep-derived: a vantage looks straight
                # down the estimated normal, so its class vote carries no
                # world-frame information
                fmap.observe(o.position, o.sigma ** 2 * np.eye(3),
                             _UNIFORM_ORIENTATION)

        est_pose = track_target_pose(track, config)
        normal = est_pose.z_axis()
        goal_est = Pose3(est_pose.position + standback * normal, est_pose.quat)

        bias = rng.normal(0.0, noise.position_sigma, 3) \
            if noise.position_sigma > 0 else np.zeros(3)
        jitter_sigma = 0.5 * noise.position_sigma
        if flower is not None:
            goal_true = flower.anther_center() + standback * normal

            def observe(step, _gt=goal_true, _q=est_pose.quat, _b=bias):
                p = _gt + _b
                if jitter_sigma > 0:
                    p = p + rng.normal(0.0, jitter_sigma, 3)
                return Pose3(p, _q)
        else:
            observe = None

        state, q, rows = run_servo(arm, q, goal_est, params, observe=observe)
        attempt.servo_steps = state.steps
        attempt.servo_phase = state.phase.value
        attempt.servo_rows = rows
        n_align = sum(1 for r in rows if r[1] == ServoPhase.PARALLEL_ALIGN.value)
        events.append((FsmState.SERVO_ALIGN, f"steps={n_align}"))
        events.append((FsmState.SERVO_APPROACH, f"steps={len(rows) - n_align}"))

        if state.phase is not ServoPhase.CONTACT:
            if flower is not None:
                attempt.miss_distance = _min_tip_distance(
                    arm, rows, flower.anther_center())
            events.append((FsmState.NEXT_FLOWER, "servo failed"))
            q = q_v  # retract along the approach before the next leg
            tip_pose = forward_kinematics(arm, q)
            continue

        events.append((FsmState.POLLINATE, f"track={track.id}"))
        tip_pose = forward_kinematics(arm, q)
        plate_target = state.frozen_flower if state.frozen_flower is not None \
            else goal_est
        trace = pollinate(platform, effector_lut, plate_target, tip_pose)
        (attempt.touched, attempt.pollinated, attempt.orientation_ok,
         attempt.miss_distance) = _score_attempt(trace, tip_pose, platform,
                                                 flower, config)
        fmap.mark_pollinated(track.id)
        events.append((FsmState.NEXT_FLOWER,
                       f"touched={attempt.touched} "
                       f"pollinated={attempt.pollinated}"))
        q = q_v  # retract to the standoff pose before the next leg
        tip_pose = forward_kinematics(arm, q)

    matched, fps, seen = match_tracks_to_flowers(fmap.confirmed_tracks(),
                                                 scene, config)
    result.seen = seen
    result.confirmed = len(fmap.confirmed_tracks())
    result.false_positives = len(fps)
    events.append((FsmState.DONE,
                   f"attempted={result.attempted} touched={result.touched} "
                   f"pollinated={result.pollinated}"))
    return result


def run_trials(scenarios, trials_per_scenario=None, master_seed: int = 0,
               config: PipelineConfig | None = None,
               models: ModelBundle | None = None,
               arm: SerialArmModel | None = None) -> list:
    """Independent seeded trials over the given scenario ids.

    trials_per_scenario: int for a flat count, None for each scenario's
    default campaign count.
    """
    config = config if config is not None else PipelineConfig()
    models = models if models is not None else train_perception_models(config)
    arm = arm if arm is not None else default_arm_model()
    platform = ParallelPlatform(radius=config.platform_radius,
                                stroke=(config.stroke_min, config.stroke_max))
    effector_lut = build_ik_lut(platform, config.ik_lut_step)

    results = []
    for s in scenarios:
        if trials_per_scenario is None:
            n = SCENARIO_TRIALS[s - 1] if 1 <= s <= len(SCENARIO_TRIALS) else 1
        else:
            n = int(trials_per_scenario)
        for t in range(n):
            scene_seed = int(np.random.SeedSequence(
                [master_seed, s, t]).generate_state(1)[0])
            scene = generate_scene(s, scene_seed)
            rng = np.random.default_rng(
                np.random.SeedSequence([master_seed, s, t, 1]))
            results.append(run_fsm(scene, config, rng, models, arm,
                                   effector_lut, scenario=s, trial=t,
                                   seed=scene_seed))
    return results
