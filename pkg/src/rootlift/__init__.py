"""Differentiable closed-form recovery of a hand's camera-space root translation."""

from .camera import (
    CameraIntrinsics,
    normalize_pixel,
    project,
    rectify_intrinsics,
    rectify_pixel,
    unrectify_pixel,
)
from .errors import (
    DegenerateGeometry,
    DidNotConverge,
    InvalidConfig,
    NonPositiveDepth,
    RootliftError,
    SchemaError,
    ShapeMismatch,
    TooFewCorrespondences,
)
from .kernels import BACKEND
from .losses import (
    loss_keypoint_consistency,
    loss_projected_vertices,
    loss_relative_l1,
    loss_translation_rmse,
)
from .solver import (
    GradientBundle,
    LinearSystem,
    SolveResult,
    apply_regressor,
    build_system,
    solve_ls,
    solve_wls,
    solve_wls_vjp,
    to_camera_space,
)
from ._version import __version__

__all__ = [
    "BACKEND",
    "CameraIntrinsics",
    "DegenerateGeometry",
    "DidNotConverge",
    "GradientBundle",
    "InvalidConfig",
    "LinearSystem",
    "NonPositiveDepth",
    "RootliftError",
    "SchemaError",
    "ShapeMismatch",
    "SolveResult",
    "TooFewCorrespondences",
    "__version__",
    "apply_regressor",
    "build_system",
    "loss_keypoint_consistency",
    "loss_projected_vertices",
    "loss_relative_l1",
    "loss_translation_rmse",
    "normalize_pixel",
    "project",
    "rectify_intrinsics",
    "rectify_pixel",
    "solve_ls",
    "solve_wls",
    "solve_wls_vjp",
    "to_camera_space",
    "unrectify_pixel",
]
