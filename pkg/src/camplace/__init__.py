"""Budget-constrained camera placement over voxelized 3D environments."""

from camplace.errors import (
    CamplaceError,
    CapacityError,
    ConfigError,
    ParseError,
    ProvenanceError,
)
from camplace.geometry import (
    CoverageTarget,
    PointCloud,
    VoxelGrid,
    build_free_space_targets,
    label_shelf_targets,
    load_point_cloud,
    voxelize,
)
from camplace.camera import (
    CameraIntrinsics,
    CandidateSet,
    Pose6,
    generate_candidates,
    pixel_ray,
)
from camplace.visibility import (
    RaycastConfig,
    VisibilityMatrix,
    build_matrix,
    camera_view,
    incidence_ok,
    prune_blocked,
    raycast,
)
from camplace.objective import (
    CoverageProfile,
    Selection,
    coverage_gap,
    coverage_profile,
    deficit_cost,
    marginal_gain,
    nontriangulatable_fraction,
)

__version__ = "0.1.0"

__all__ = [
    "CamplaceError", "CapacityError", "ConfigError", "ParseError", "ProvenanceError",
    "CoverageTarget", "PointCloud", "VoxelGrid", "build_free_space_targets",
    "label_shelf_targets", "load_point_cloud", "voxelize",
    "CameraIntrinsics", "CandidateSet", "Pose6", "generate_candidates", "pixel_ray",
    "RaycastConfig", "VisibilityMatrix", "build_matrix", "camera_view",
    "incidence_ok", "prune_blocked", "raycast",
    "CoverageProfile", "Selection", "coverage_gap", "coverage_profile",
    "deficit_cost", "marginal_gain", "nontriangulatable_fraction",
]
