"""Multi-agent relative pose correction via agent-object pose graph optimization."""

from .geometry import (
    OrientedBox2,
    Pose2,
    compose,
    consistency_error,
    inverse,
    normalize_angle,
    rotated_iou_bev,
)
from .uncertainty import (
    BoxDetection,
    InfoMatrix3,
    bessel_i1_over_i0,
    box_from_vector,
    elu_regularizer,
    gaussian_center_loss,
    information_matrix,
    log_bessel_i0,
    transform_box,
    von_mises_angle_loss,
)
from .posegraph import (
    AgentMessage,
    GraphEdge,
    PoseGraph,
    SolveResult,
    SolverParams,
    build_pose_graph,
    cluster_boxes,
    init_object_pose,
    optimize,
    relative_poses,
    with_uniform_info,
)
from .scenario import (
    DetectorSpec,
    NoiseSpec,
    ScenarioError,
    Scene,
    SceneAgent,
    SceneObject,
    corrupt_pose,
    derive_seed,
    detect,
    generate_scene,
    make_messages,
    messages_from_dict,
    messages_to_dict,
    scene_from_dict,
    scene_to_dict,
)
from .evaluate import (
    BenchmarkConfig,
    BenchmarkResult,
    EvalReport,
    average_precision,
    late_fuse,
    relative_pose_error,
    run_benchmark,
    write_histogram_csv,
)

__version__ = "0.1.0"

__all__ = [
    "AgentMessage",
    "BenchmarkConfig",
    "BenchmarkResult",
    "BoxDetection",
    "DetectorSpec",
    "EvalReport",
    "GraphEdge",
    "InfoMatrix3",
    "NoiseSpec",
    "OrientedBox2",
    "Pose2",
    "PoseGraph",
    "ScenarioError",
    "Scene",
    "SceneAgent",
    "SceneObject",
    "SolveResult",
    "SolverParams",
    "average_precision",
    "bessel_i1_over_i0",
    "box_from_vector",
    "build_pose_graph",
    "cluster_boxes",
    "compose",
    "consistency_error",
    "corrupt_pose",
    "derive_seed",
    "detect",
    "elu_regularizer",
    "gaussian_center_loss",
    "generate_scene",
    "information_matrix",
    "init_object_pose",
    "inverse",
    "late_fuse",
    "log_bessel_i0",
    "make_messages",
    "messages_from_dict",
    "messages_to_dict",
    "normalize_angle",
    "optimize",
    "relative_pose_error",
    "relative_poses",
    "rotated_iou_bev",
    "run_benchmark",
    "scene_from_dict",
    "scene_to_dict",
    "transform_box",
    "von_mises_angle_loss",
    "with_uniform_info",
    "write_histogram_csv",
]
