"""Desk-scale autonomous pollination: perception, mapping, planning, and
visual servoing, exercised end to end on synthetic RGB-D scenes."""

__version__ = "0.1.0"

from .config import PipelineConfig, load_config, save_config
from .geometry import CameraIntrinsics, Pose3, RgbdImage
