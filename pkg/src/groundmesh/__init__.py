"""Place a generated object mesh in a sensor frame, and decode SDFs into meshes."""

from ._backend import BACKEND
from .depth import BinaryMask, CameraIntrinsics, DepthImage, backproject, median_scale_align
from .features import CorrespondenceSet, FeatureSet, compute_fpfh, mutual_match, voxel_downsample
from .geometry import (
    Aabb,
    NeighborIndex,
    PointCloud,
    RigidScaleTransform,
    TriangleMesh,
    apply_transform,
    bbox_diagonal,
    build_index,
    compose,
    estimate_normals,
    knn,
    radius_search,
)
from .mc import marching_cubes
from .metrics import MetricsConfig, MetricsReport, chamfer, evaluate, fscore, sample_surface
from .registration import (
    IcpConfig,
    ProcrustesFit,
    RansacConfig,
    RegistrationParams,
    RegistrationResult,
    fit_rigid,
    icp_refine,
    init_scale,
    ransac_register,
    register_object,
)
from .sdf import (
    DecodeStats,
    HierarchicalConfig,
    VoxelGrid,
    dense_decode,
    hierarchical_decode,
    make_box,
    make_sphere,
    make_torus,
    make_union,
)

__version__ = "0.1.0"
