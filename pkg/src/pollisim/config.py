"""Run configuration: every tunable default in one place, YAML in and out."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import yaml


@dataclass
class PipelineConfig:
    # perception training
    training_seed: int = 0
    training_samples_per_class: int = 12
    color_smoothing: float = 1.0
    lut_bits: int = 8
    min_patch_area: int = 60
    patch_inflation: int = 4
    patch_accept_threshold: float = 0.5
    warm_pixel_threshold: float = 60.0   # r-b units marking anther pixels

    # occupancy map
    map_resolution: float = 0.01
    map_levels: int = 8
    map_hit_logodds: float = 0.85
    map_miss_logodds: float = -0.4
    map_clamp_min: float = -2.0
    map_clamp_max: float = 3.5
    map_occupancy_threshold: float = 0.5
    map_max_range: float = 1.0
    map_pixel_stride: int = 4

    # flower tracking
    min_observations: int = 2
    mahalanobis_gate: float = 3.0
    new_track_distance: float = 0.03
    observation_sigma_floor: float = 0.0015

    # mapping sweep and pose refinement
    sweep_center: tuple = (0.48, 0.0, 0.35)
    sweep_radius: float = 0.5
    sweep_azimuth_span_deg: float = 40.0    # arc covers +/- this
    sweep_azimuth_count: int = 5
    sweep_elevations_deg: tuple = (10.0, 28.0)
    refine_views: int = 2
    refine_offset: float = 0.012

    # planning
    vantage_standoff: float = 0.15
    reach_limit: float = 0.7
    clearance_radius: float = 0.03
    path_step: float = 0.02
    rrt_sample_budget: int = 5000
    rrt_goal_bias: float = 0.10
    rrt_shortcut_passes: int = 50
    rrt_sample_margin: float = 0.3
    exact_tsp_max: int = 12

    # servoing
    servo_parallel_threshold: float = 0.005
    servo_contact_distance: float = 0.003
    servo_velocity_norm: float = 0.15
    servo_dt: float = 0.05
    servo_condition_threshold: float = 100.0
    servo_blind_trigger: float = 0.06
    servo_max_steps: int = 1000

    # end effector
    platform_radius: float = 0.015
    stroke_min: float = 0.0
    stroke_max: float = 0.020
    ik_lut_step: float = 0.002
    ik_orientation_weight: float = 0.05

    # contact scoring
    detection_match_distance: float = 0.03
    touch_axial_tolerance: float = 0.013
    pollinate_axial_tolerance: float = 0.008
    pollinate_tilt_tolerance_deg: float = 20.0

    # campaign
    noise: str = "default"
    # ready configuration: tool at (0.30, 0, 0.40) facing the plant (+x)
    home_q: tuple = (0.0, 1.5083, -0.9981, 0.0, 1.0607, 1.5708)

    def __post_init__(self):
        if self.noise not in ("off", "low", "default"):
            raise ValueError(f"noise must be off/low/default, got {self.noise!r}")
        for name in ("sweep_center", "sweep_elevations_deg", "home_q"):
            setattr(self, name, tuple(float(v) for v in getattr(self, name)))

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out


def config_from_dict(data: dict) -> PipelineConfig:
    known = {f.name for f in dataclasses.fields(PipelineConfig)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return PipelineConfig(**data)


def load_config(path) -> PipelineConfig:
    with open(path, "r") as f:
        data = yaml.safe_load(f)
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ValueError("config file must be a YAML mapping")
    return config_from_dict(data)


def save_config(config: PipelineConfig, path) -> None:
    with open(path, "w") as f:
        yaml.safe_dump(config.to_dict(), f, sort_keys=False)
