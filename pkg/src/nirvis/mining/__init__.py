"""Aligned NIR/VIS patch-pair mining."""

from .align import (CANONICAL_LANDMARKS, FACE_SIZE, AlignedFace, AlignmentError, affine_from_points,
                    landmark_align, normalize_stats, warp_affine)
from .dataset import PatchFileError, load_patches, save_patches
from .gate import gate_decision, gradient_magnitude, pearson, similarity_gate
from .mine import MiningConfig, PatchPair, flip_pair, mine_pairs, prune_pairs, region_of
from .register import Registration, affine_register, params_to_matrix

__all__ = [
    "CANONICAL_LANDMARKS", "FACE_SIZE", "AlignedFace", "AlignmentError", "MiningConfig",
    "PatchFileError", "PatchPair", "Registration", "affine_from_points", "affine_register",
    "flip_pair", "gate_decision", "gradient_magnitude", "landmark_align", "load_patches",
    "mine_pairs", "normalize_stats", "params_to_matrix", "pearson", "prune_pairs", "region_of",
    "save_patches", "similarity_gate", "warp_affine",
]
