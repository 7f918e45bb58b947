"""Weakly supervised localization at desk scale: a binary-class detector
trained on noisy pseudo boxes with a weighted-entropy objective, a single-box
regression baseline, synthetic data, and the matching evaluation metrics."""

from .geometry import Box, DeltaVec, ScoredBox, decode_deltas, encode_deltas, giou, iou, nms
from .losses import LossConfig, LossValue

__all__ = [
    "Box", "DeltaVec", "ScoredBox", "LossConfig", "LossValue",
    "iou", "giou", "nms", "encode_deltas", "decode_deltas",
]

__version__ = "0.1.0"
