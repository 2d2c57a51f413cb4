"""Simulated peg-in-hole assembly: hole detection, yes/no matching, yaw estimation and spiral insertion."""

from .detection import HoleCandidate, HoleDetector, Scene, centroid, detect_candidates, load_scene, save_scene
from .errors import (
    BackendError,
    EmptyDatasetError,
    PegmateError,
    TransportError,
    ValidationError,
)
from .geometry import Polygon2D, SE2Pose, SE3Transform, insertability, min_area_rect
from .insertion import FailureMode, SpiralParams, simulate_attempt, spiral_waypoints
from .matcher import (
    HoleMatcher,
    InputStrategy,
    MatchResponse,
    OracleBackend,
    RemoteBackend,
    build_prompt,
    match_hole,
    parse_response,
    rank_candidates,
)
from .pipeline import (
    PipelineConfig,
    emit_report,
    make_e2e_worlds,
    run_ablation,
    run_e2e,
    run_matching_experiment,
)
from .pose import YawEstimator, canonicalize, estimate_yaw
from .worldgen import (
    RenderConfig,
    ShapeSpec,
    make_board,
    make_matching_benchmark,
    make_panel,
    render_scene,
)

__version__ = "0.1.0"

__all__ = [
    "BackendError", "EmptyDatasetError", "FailureMode", "HoleCandidate", "HoleDetector", "HoleMatcher",
    "InputStrategy", "MatchResponse", "OracleBackend", "PegmateError", "PipelineConfig", "Polygon2D",
    "RemoteBackend", "RenderConfig", "SE2Pose", "SE3Transform", "Scene", "ShapeSpec", "SpiralParams",
    "TransportError", "ValidationError", "YawEstimator", "build_prompt", "canonicalize", "centroid",
    "detect_candidates", "emit_report", "estimate_yaw", "insertability", "load_scene", "make_board",
    "make_e2e_worlds", "make_matching_benchmark", "make_panel", "match_hole", "min_area_rect", "parse_response",
    "rank_candidates", "render_scene", "run_ablation", "run_e2e", "run_matching_experiment", "save_scene",
    "simulate_attempt", "spiral_waypoints",
]
