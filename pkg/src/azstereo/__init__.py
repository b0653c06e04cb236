"""Surface reconstruction from calibrated multi-view azimuth maps.

Azimuth observations lift to image-plane tangent vectors of the surface;
requiring the tangents of one point from all visible views to span its
tangent plane pins down both correspondence and the surface normal.  A
neural signed-distance field is optimized under that consistency, a
silhouette term, and an eikonal regularizer.
"""

from .estimator import AzimuthStereoReconstructor, check_views
from .evaluation import Mesh, Metrics, chamfer, fscore, marching_cubes, normal_mae
from .field import NetworkSpec, SDFNetwork, load_checkpoint, save_checkpoint
from .geom import (
    AzimuthMap,
    Camera,
    CameraIntrinsics,
    CameraPose,
    RankClass,
    SilhouetteMask,
    accumulate_tsc,
    azimuth_of_normal,
    azimuth_to_tangent,
    classify_rank,
    normal_from_tangents,
    normalize_cameras,
    project,
    tangent_half_pi,
)
from .shapes import RoundedBox, Sphere, Torus, analytic_sdf
from .synth import AmbiguityMode, RigKind, RigSpec, export_dataset, load_dataset, make_rig, render_view
from .tracing import Hit, Ray, VisibilityOutcome, min_sdf_along_ray, sphere_trace, visibility
from .train import TrainConfig, TscMode

__version__ = "0.1.0"

__all__ = [
    "AzimuthStereoReconstructor",
    "AmbiguityMode",
    "AzimuthMap",
    "Camera",
    "CameraIntrinsics",
    "CameraPose",
    "Hit",
    "Mesh",
    "Metrics",
    "NetworkSpec",
    "RankClass",
    "Ray",
    "RigKind",
    "RigSpec",
    "RoundedBox",
    "SDFNetwork",
    "SilhouetteMask",
    "Sphere",
    "Torus",
    "TrainConfig",
    "TscMode",
    "VisibilityOutcome",
    "accumulate_tsc",
    "analytic_sdf",
    "azimuth_of_normal",
    "azimuth_to_tangent",
    "chamfer",
    "check_views",
    "classify_rank",
    "export_dataset",
    "fscore",
    "load_checkpoint",
    "load_dataset",
    "make_rig",
    "marching_cubes",
    "min_sdf_along_ray",
    "normal_from_tangents",
    "normal_mae",
    "normalize_cameras",
    "project",
    "render_view",
    "save_checkpoint",
    "sphere_trace",
    "tangent_half_pi",
    "visibility",
]
