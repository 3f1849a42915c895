"""Lane-intrusion recognition from monocular detection tracks with PSRNet."""

from .estimator import MotionSeriesExtractor, PSRNetClassifier
from .geometry import CameraIntrinsics, CameraPose, project, relative_position_world, rotation_matrix
from .harness import MetricsReport, TrainConfig, crossval, evaluate, kfold_split, load_dataset, train
from .normalize import MotionSeries, build_series, make_windows, normalize_frame
from .psrnet import PSRNet, PSRNetConfig
from .scenegen import LABELS, ScenarioConfig, SensorConfig, generate_dataset, render_detections, simulate_scene

__version__ = "0.1.0"

__all__ = [
    "CameraIntrinsics",
    "CameraPose",
    "LABELS",
    "MetricsReport",
    "MotionSeries",
    "MotionSeriesExtractor",
    "PSRNet",
    "PSRNetClassifier",
    "PSRNetConfig",
    "ScenarioConfig",
    "SensorConfig",
    "TrainConfig",
    "build_series",
    "crossval",
    "evaluate",
    "generate_dataset",
    "kfold_split",
    "load_dataset",
    "make_windows",
    "normalize_frame",
    "project",
    "relative_position_world",
    "render_detections",
    "rotation_matrix",
    "simulate_scene",
    "train",
]
