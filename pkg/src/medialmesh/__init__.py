"""Medial skeletons and convolution-surface meshes from binary voxel volumes."""

from .config import PipelineConfig, load_config
from .convsurf import ConvolutionField, convolve_segment, convolve_triangle, field_eval, field_gradient, kernel_eval
from .grid import VoxelGrid, compute_udf, dice, hausdorff, laplacian, mask_udf, regularize_udf
from .losses import LossConfig, dice_loss, gradient_check, laplacian_loss, mat_loss, stochastic_distance_loss, \
    total_loss
from .mat import MatConfig, MedialCloud, dilate_radii, extract_candidates, relaxed_ridge_mask
from .mesher import (OrientedPointCloud, RefineConfig, TriangleMesh, check_watertight, extract_cloud,
                     marching_cubes, refine_cloud, sample_field, voxelize)
from .pipeline import reconstruct, roundtrip, run_pipeline
from .skeleton import FlowInterface, SkeletonComplex, build_alpha_complex, cluster, detect_leaves, simplify

__version__ = "0.1.0"
