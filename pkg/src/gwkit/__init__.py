"""gwkit: entropic Gromov-Wasserstein transport plus the deterministic
geometry, compositing, metric, and loss stages around it."""

from .compositing import (
    BodyPartCrop,
    apply_residual,
    crop_part,
    fuse,
    load_part_rects,
    paste_crop,
    psnr,
    ssim,
)
from .core import (
    Coupling,
    DiscreteDistribution,
    FeatureBatch,
    IntraCostMatrix,
    Mask,
    RasterImage,
    SolverConfig,
    intra_costs,
    load_distribution,
    load_feature_batch,
    load_image,
    load_mask,
    load_matrix,
    load_residual,
    save_feature_batch,
    save_image,
    save_mask,
    save_matrix,
    save_residual,
    uniform_distribution,
)
from .errors import (
    DimensionMismatchError,
    GwkitError,
    InputError,
    KernelUnderflowError,
    NumericalError,
    StageError,
)
from .facegeom import (
    BlendWeights,
    Candidate,
    FaceLandmarks,
    FaceVectorField,
    TopMatches,
    blend_face,
    load_landmark_database,
    load_landmarks,
    orientation_similarity,
    top_m_candidates,
    vector_field,
)
from .gromov import (
    GWResult,
    default_gw_epsilon,
    gw_brute_force,
    gw_cost_gradient,
    gw_linearized_cost,
    gw_objective,
    gw_solve,
    gw_solve_costs,
)
from .losses import (
    ScoreRecord,
    combined_loss,
    load_score_records,
    local_refinement_loss,
    spatial_loss,
    temporal_loss,
)
from .pipeline import FrameManifest, load_manifests, process_frame, process_sequence
from .sinkhorn import (
    SinkhornState,
    default_epsilon,
    gibbs_kernel,
    sinkhorn_solve,
    use_log_domain,
)

__version__ = "0.1.0"

__all__ = [
    "BlendWeights",
    "BodyPartCrop",
    "Candidate",
    "Coupling",
    "DimensionMismatchError",
    "DiscreteDistribution",
    "FaceLandmarks",
    "FaceVectorField",
    "FeatureBatch",
    "FrameManifest",
    "GWResult",
    "GwkitError",
    "InputError",
    "IntraCostMatrix",
    "KernelUnderflowError",
    "Mask",
    "NumericalError",
    "RasterImage",
    "ScoreRecord",
    "SinkhornState",
    "SolverConfig",
    "StageError",
    "TopMatches",
    "apply_residual",
    "blend_face",
    "combined_loss",
    "crop_part",
    "default_epsilon",
    "default_gw_epsilon",
    "fuse",
    "gibbs_kernel",
    "gw_brute_force",
    "gw_cost_gradient",
    "gw_linearized_cost",
    "gw_objective",
    "gw_solve",
    "gw_solve_costs",
    "intra_costs",
    "load_distribution",
    "load_feature_batch",
    "load_image",
    "load_landmark_database",
    "load_landmarks",
    "load_manifests",
    "load_mask",
    "load_matrix",
    "load_part_rects",
    "load_residual",
    "load_score_records",
    "local_refinement_loss",
    "orientation_similarity",
    "paste_crop",
    "process_frame",
    "process_sequence",
    "psnr",
    "save_feature_batch",
    "save_image",
    "save_mask",
    "save_matrix",
    "save_residual",
    "sinkhorn_solve",
    "spatial_loss",
    "ssim",
    "temporal_loss",
    "top_m_candidates",
    "uniform_distribution",
    "use_log_domain",
    "vector_field",
]
