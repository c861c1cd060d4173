"""Desk-scale ultrasound biopsy navigation engine.

Modules cover the full stack: spatial guidance math (geometry), infrared
tool identification (tracking), probe mask calibration (calibration),
guidance cues (cues), wire formats and the latency harness (wire,
pipeline), synthetic sensing and experiments (simulate, experiments),
and the session service (service).
"""

__version__ = "0.1.0"

from .calibration import (
    BoundingBox,
    ImageMask,
    PackagedFrame,
    ProbeGeometry,
    compute_probe_geometry,
    detect_top_corners,
    extract_bounds,
    package_frame,
)
from .cues import (
    CueConfig,
    InPlaneCueState,
    NeedleToolGeometry,
    OutOfPlaneCueState,
    TrackingLostCue,
    cue_frame,
    inplane_cues,
    outofplane_cues,
)
from .experiments import (
    AccuracyGrid,
    ExperimentReport,
    PunctureRecord,
    run_accuracy_experiment,
    run_usecase_metrics,
)
from .geometry import (
    BiopsyError,
    ImagePlane,
    NeedleState,
    RigidTransform,
    biopsy_error,
    biopsy_success,
    plane_distance_and_hit,
    project_needle_to_plane,
    solve_image_intersection,
    vec3,
)
from .pipeline import LatencyProbeConfig, LatencyRecord, run_latency_probe
from .simulate import (
    DepthCameraModel,
    FanSpec,
    default_probe_geometry,
    default_tools,
    synthesize_observation,
)
from .tracking import (
    MarkerObservation,
    MatchResult,
    ToolDefinition,
    ToolPose,
    candidate_pairs,
    dfs_match,
    estimate_pose,
    resolve_conflicts,
    track_frame,
)
from .wire import (
    FramePacket,
    TrackingPacket,
    decode_frame,
    decode_tracking,
    encode_frame,
    encode_tracking,
)

__all__ = [
    "__version__",
    "AccuracyGrid",
    "BiopsyError",
    "BoundingBox",
    "CueConfig",
    "DepthCameraModel",
    "ExperimentReport",
    "FanSpec",
    "FramePacket",
    "ImageMask",
    "ImagePlane",
    "InPlaneCueState",
    "LatencyProbeConfig",
    "LatencyRecord",
    "MarkerObservation",
    "MatchResult",
    "NeedleState",
    "NeedleToolGeometry",
    "OutOfPlaneCueState",
    "PackagedFrame",
    "ProbeGeometry",
    "PunctureRecord",
    "RigidTransform",
    "ToolDefinition",
    "ToolPose",
    "TrackingLostCue",
    "TrackingPacket",
    "biopsy_error",
    "biopsy_success",
    "candidate_pairs",
    "compute_probe_geometry",
    "cue_frame",
    "decode_frame",
    "decode_tracking",
    "default_probe_geometry",
    "default_tools",
    "detect_top_corners",
    "dfs_match",
    "encode_frame",
    "encode_tracking",
    "estimate_pose",
    "extract_bounds",
    "inplane_cues",
    "outofplane_cues",
    "package_frame",
    "plane_distance_and_hit",
    "project_needle_to_plane",
    "resolve_conflicts",
    "run_accuracy_experiment",
    "run_latency_probe",
    "run_usecase_metrics",
    "solve_image_intersection",
    "synthesize_observation",
    "track_frame",
    "vec3",
]
