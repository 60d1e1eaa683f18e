"""Synthetic scenes, RGB-D rendering, and the end-to-end trial harness."""

from .scene import (SCENARIO_REACHABLE, SCENARIO_TRIALS, CaneSpec, FlowerSpec,
                    LeafSpec, NoiseSpec, SceneSpec, generate_scene,
                    noise_preset)
from .render import render_labels, render_rgbd
from .pipeline import (AttemptResult, FsmState, ModelBundle, Observation,
                       TrialResult, load_models, perceive_frame, run_fsm,
                       run_mapping_sweep, run_trials, save_models,
                       solve_tool_ik, sweep_poses, train_perception_models)
from .report import (ScenarioReport, aggregate_report, format_report_table,
                     load_trials_csv, recompute_overall, write_attempts_csv,
                     write_report_csv, write_trials_csv)
