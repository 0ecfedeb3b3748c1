"""Panoptic occupancy post-processing and evaluation."""

__version__ = "0.1.0"

from .assign import (AssignConfig, AssignStats, NoCenterPolicy, nearest_assign,  # noqa: E402
                     nearest_assign_oracle, nearest_center, process_frame)
from .geometry import (OCC3D_NUSCENES, GridIndex, GridSpec, LabelTaxonomy,  # noqa: E402
                       default_taxonomy, load_grid_spec, load_taxonomy, voxel_position)
from .metrics import compare_panoptic_exact, miou, panoptic_quality  # noqa: E402
from .proposal import (InstanceCenter, PeakCandidate, ProposalConfig,  # noqa: E402
                       decode_centers, nms_peaks, propose, rank_and_threshold)
from .tensors import (BEVOccLogits, CenterHeatmap, PanopticGrid,  # noqa: E402
                      RegressionField, SemanticGrid, channel_to_height, validate)

__all__ = [
    "AssignConfig", "AssignStats", "NoCenterPolicy", "nearest_assign", "nearest_assign_oracle",
    "nearest_center", "process_frame",
    "OCC3D_NUSCENES", "GridIndex", "GridSpec", "LabelTaxonomy", "default_taxonomy",
    "load_grid_spec", "load_taxonomy", "voxel_position",
    "compare_panoptic_exact", "miou", "panoptic_quality",
    "InstanceCenter", "PeakCandidate", "ProposalConfig", "decode_centers", "nms_peaks", "propose",
    "rank_and_threshold",
    "BEVOccLogits", "CenterHeatmap", "PanopticGrid", "RegressionField", "SemanticGrid",
    "channel_to_height", "validate",
]
