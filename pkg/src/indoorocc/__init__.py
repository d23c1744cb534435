"""Deterministic core of monocular indoor occupancy prediction.

Depth binning, depth-weighted multi-scale feature lifting, occupancy label
generation and scene-completion metrics, with a small binary tensor format
as the boundary to neural feature and depth producers.
"""

from .camera import CameraModel, PixelDepth, in_fov, project, unproject, world_to_camera
from .depthbin import (
    DepthBinSpec,
    bce_depth_loss,
    bce_depth_loss_grad,
    bin_edges,
    bin_index,
    continuous_index,
    downsample_distribution,
    one_hot_target,
)
from .errors import DegenerateViewError, DomainError, InvalidPoseError, InvalidPredictionError
from .labelgen import (
    FrameDecision,
    LabeledPointSet,
    LabelGenConfig,
    SceneBounds,
    frame_filter,
    generate_frame_label,
    sample_frames,
    select_origin,
    split_frames,
    transfer_labels,
    validate_pose,
)
from .lifting import FeaturePyramid, VoxelProjection, fuse, project_voxels, sample_depth_weights, sample_features
from .metrics import ConfusionMatrix, accumulate, class_iou, miou, occupancy_iou, report, report_csv
from .voxel import CLASS_NAMES, GridSpec, LabelGrid, centroid, class_histogram, downsample_labels

__version__ = "0.1.0"
