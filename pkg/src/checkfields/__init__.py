"""Training-free localisation of bank-check fields.

A zero-shot detector proposes boxes for three fixed prompts; a multimodal LLM
then picks the right box per field, either by labelling proposals on the check
(signature) or by matching OCR of stacked crops against extracted field text
(all other fields).  Both models sit behind :class:`checkfields.backends.Backend`.
"""
from .config import ConfigError, EngineConfig, load_config
from .geometry import (BoundingBox, CandidateSet, FieldKind, ScoredBox, Space, iou,
                       micr_widen, nms, size_filter)
from .imaging import CheckImage, compose_stack, load_image, overlay_labels, resize_pad, to_original
from .pipeline import detect_fields, propose
from .records import CheckResult, FieldDetection, FieldResult
from .signature import LoopOutcome, detect_signature
from .textfields import build_cer_matrix, filter_candidates, select_detection
from .textmetrics import cer, edit_distance, normalize

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "EngineConfig", "load_config",
    "BoundingBox", "CandidateSet", "FieldKind", "ScoredBox", "Space",
    "iou", "micr_widen", "nms", "size_filter",
    "CheckImage", "compose_stack", "load_image", "overlay_labels", "resize_pad", "to_original",
    "detect_fields", "propose", "CheckResult", "FieldDetection", "FieldResult",
    "LoopOutcome", "detect_signature", "build_cer_matrix", "filter_candidates",
    "select_detection", "cer", "edit_distance", "normalize",
]
