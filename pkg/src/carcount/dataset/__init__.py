"""Scene ingestion, grid partitioning, patch extraction and synthetic scenes."""
from .partition import TEST, TRAIN, GridPartition, partition
from .patches import (CENTRAL_REGION, GRAY, MAX_COUNT, MIN_INSIDE, CountOverflow, CountSample,
                      PatchList, PatchSample, center_crop, count_inside, extract_classification_patches,
                      extract_count_patches, extract_patch, in_central_region, mask_context)
from .scene import Annotation, SceneImage, format_dots, list_scenes, load_scene, parse_dots, save_scene
from .synth import CapacityError, blank_scene, synth_scene

__all__ = [
    "TEST", "TRAIN", "GridPartition", "partition",
    "CENTRAL_REGION", "GRAY", "MAX_COUNT", "MIN_INSIDE", "CountOverflow", "CountSample", "PatchList",
    "PatchSample", "center_crop", "count_inside", "extract_classification_patches",
    "extract_count_patches", "extract_patch", "in_central_region", "mask_context",
    "Annotation", "SceneImage", "format_dots", "list_scenes", "load_scene", "parse_dots", "save_scene",
    "CapacityError", "blank_scene", "synth_scene",
]
