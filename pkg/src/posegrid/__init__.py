"""Grid tensor codecs, losses, and metrics for multi-object 6D pose
estimation from depth images.

POSEGRID_THREADS caps the BLAS/OpenMP pools (results are identical at
any thread count); it must be read before numpy loads, hence the block
ahead of the imports.
"""

import os as _os

_threads = _os.environ.get("POSEGRID_THREADS")
if _threads is not None:
    if not _threads.isdigit() or int(_threads) < 1:
        raise ValueError(f"POSEGRID_THREADS must be a positive integer, got {_threads!r}")
    for _var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
    ):
        _os.environ.setdefault(_var, _threads)

from .camera import (
    CameraIntrinsics,
    CellCoords,
    GridSpec,
    OutOfFrustumError,
    OutOfImageError,
    ProjectionError,
    Variant,
    backproject,
    cell_of,
    cell_to_point,
    enlarged_denormalize,
    enlarged_normalize,
    project,
)
from .codecs import (
    EVE_BORDER_THRESHOLD,
    CoverageReport,
    ObjectAnnotation,
    PoseHypothesis,
    VariantCoverage,
    annotations_from,
    coverage_report,
    decode,
    encode,
)
from .evaluation import (
    DatasetReport,
    EvalConfig,
    MatchLabel,
    MatchResult,
    PRCurve,
    SceneTruth,
    average_precision,
    evaluate_dataset,
    match,
)
from .geometry import (
    EulerZYZ,
    ObjectModel,
    Pose,
    Rotation,
    ShapeSphere,
    SymmetryKind,
    SymmetrySpec,
    average_poses,
    euler_to_rotation,
    pose_distance,
    pose_distance_matrix,
    rotation_to_euler,
    symmetry_representatives,
)
from .loss import (
    LossBreakdown,
    LossWeights,
    angle_channel_count,
    angle_denormalize,
    angle_normalize,
    loss,
    loss_grad,
)
from .pipeline import VariantStats, run_roundtrip, sample_corpus
from .postprocess import ClusterParams, FinalPrediction, cluster, cluster_members
from .scenegen import (
    BinBounds,
    NoiseConfig,
    RenderResult,
    Scene,
    corrupt_depth,
    interpolate_missing,
    make_model,
    render,
    sample_scene,
)

__version__ = "0.1.0"

__all__ = [
    "BinBounds",
    "CameraIntrinsics",
    "CellCoords",
    "ClusterParams",
    "CoverageReport",
    "DatasetReport",
    "EVE_BORDER_THRESHOLD",
    "EulerZYZ",
    "EvalConfig",
    "FinalPrediction",
    "GridSpec",
    "LossBreakdown",
    "LossWeights",
    "MatchLabel",
    "MatchResult",
    "NoiseConfig",
    "ObjectAnnotation",
    "ObjectModel",
    "OutOfFrustumError",
    "OutOfImageError",
    "PRCurve",
    "Pose",
    "PoseHypothesis",
    "ProjectionError",
    "RenderResult",
    "Rotation",
    "Scene",
    "SceneTruth",
    "ShapeSphere",
    "SymmetryKind",
    "SymmetrySpec",
    "Variant",
    "VariantCoverage",
    "VariantStats",
    "angle_channel_count",
    "angle_denormalize",
    "angle_normalize",
    "annotations_from",
    "average_poses",
    "average_precision",
    "backproject",
    "cell_of",
    "cell_to_point",
    "cluster",
    "cluster_members",
    "corrupt_depth",
    "coverage_report",
    "decode",
    "encode",
    "enlarged_denormalize",
    "enlarged_normalize",
    "euler_to_rotation",
    "evaluate_dataset",
    "interpolate_missing",
    "loss",
    "loss_grad",
    "make_model",
    "match",
    "pose_distance",
    "pose_distance_matrix",
    "project",
    "render",
    "rotation_to_euler",
    "run_roundtrip",
    "sample_corpus",
    "sample_scene",
    "symmetry_representatives",
    "__version__",
]
