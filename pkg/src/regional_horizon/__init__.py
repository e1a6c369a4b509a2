"""Regional attention horizons for subject-conditioned diffusion transformers.

Scene layout, block-structured horizon masks, diagonal 2-D rotary ids,
masked attention kernels, the rank-aggregation data filter, and the
position-control benchmark metrics.
"""
from .attn import (
    AttentionConfig,
    TokenTensor,
    double_stream_forward,
    masked_attention_block_sparse,
    masked_attention_dense,
    synth_tokens,
)
from .bench import compute_ap, compute_miou, generate_bench, iou, match_scene
from .filter import ScoreRecord, aggregate, fractional_rank, select
from .horizon import HorizonMask, build_horizon_mask, materialize_dense, patch_in_box, visibility_stats
from .rope import PositionIds, apply_rotary, assign_position_ids
from .scene import BoundingBox, ReferenceSpec, SceneSpec, TokenLayout, build_layout, patch_cell

__version__ = "0.1.0"

__all__ = [
    "AttentionConfig", "TokenTensor", "double_stream_forward", "masked_attention_block_sparse",
    "masked_attention_dense", "synth_tokens",
    "compute_ap", "compute_miou", "generate_bench", "iou", "match_scene",
    "ScoreRecord", "aggregate", "fractional_rank", "select",
    "HorizonMask", "build_horizon_mask", "materialize_dense", "patch_in_box", "visibility_stats",
    "PositionIds", "apply_rotary", "assign_position_ids",
    "BoundingBox", "ReferenceSpec", "SceneSpec", "TokenLayout", "build_layout", "patch_cell",
]
