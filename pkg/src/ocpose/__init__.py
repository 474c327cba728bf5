"""OCpose: optimal-transport evaluation of multi-person pose estimates."""

__version__ = "0.1.0"

from .dataset_io import (
    DetectionPose,
    GroundTruthEntry,
    GTKind,
    Scene,
    SigmaTable,
    coco_sigmas,
    crowdpose_sigmas,
    load_detections,
    load_ground_truth,
    load_sigmas,
)
from .evaluator import (
    EvalOptions,
    compare,
    emit_pr_curves,
    evaluate,
    evaluate_scenes,
    sweep,
)
from .matcher import (
    brute_force_oracle,
    build_cost_matrix,
    ocpose_score,
    solve_transport,
)

__all__ = [
    "DetectionPose",
    "EvalOptions",
    "GTKind",
    "GroundTruthEntry",
    "Scene",
    "SigmaTable",
    "brute_force_oracle",
    "build_cost_matrix",
    "coco_sigmas",
    "compare",
    "crowdpose_sigmas",
    "emit_pr_curves",
    "evaluate",
    "evaluate_scenes",
    "load_detections",
    "load_ground_truth",
    "load_sigmas",
    "ocpose_score",
    "solve_transport",
    "sweep",
]
