"""Axis-aligned box arithmetic: overlap measures, delta coding, clipping, NMS.

Boxes use the corner convention (x1, y1, x2, y2) with exclusive right/bottom
edges, so area = (x2 - x1) * (y2 - y1) with no +1 pixel correction. All
functions here are pure and safe to call concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Regression deltas are clamped to +-DELTA_CLAMP before exponentiation at
# decode time, never at encode time.
DELTA_CLAMP = math.log(1000.0 / 16.0)


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle in pixel coordinates with strictly positive area."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        for v in (self.x1, self.y1, self.x2, self.y2):
            if not math.isfinite(v):
                raise ValueError(f"box coordinates must be finite, got {self}")
        if not (self.x2 > self.x1 and self.y2 > self.y1):
            raise ValueError(f"box must have positive area, got {self}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))

    def as_list(self) -> list[float]:
        """Serialized form used by every file format: [x1, y1, x2, y2]."""
        return [float(self.x1), float(self.y1), float(self.x2), float(self.y2)]

    @staticmethod
    def from_sequence(seq) -> "Box":
        x1, y1, x2, y2 = (float(v) for v in seq)
        return Box(x1, y1, x2, y2)


@dataclass(frozen=True)
class DeltaVec:
    """Box offsets relative to a reference: center shifts normalized by the
    reference size, plus log size ratios."""

    tx: float
    ty: float
    tw: float
    th: float

    def __post_init__(self):
        for v in (self.tx, self.ty, self.tw, self.th):
            if not math.isfinite(v):
                raise ValueError(f"delta components must be finite, got {self}")

    def as_array(self) -> np.ndarray:
        return np.array([self.tx, self.ty, self.tw, self.th], dtype=np.float64)


@dataclass(frozen=True)
class ScoredBox:
    box: Box
    score: float

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score must be in [0, 1], got {self.score}")


def iou(a: Box, b: Box) -> float:
    """Intersection over union; 0 for disjoint boxes."""
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    return inter / union


def giou(a: Box, b: Box) -> float:
    """Generalized IoU: IoU minus the normalized empty part of the smallest
    enclosing box. Ranges over (-1, 1]."""
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    inter = iw * ih if (iw > 0.0 and ih > 0.0) else 0.0
    union = a.area + b.area - inter
    enclosing = (max(a.x2, b.x2) - min(a.x1, b.x1)) * (max(a.y2, b.y2) - min(a.y1, b.y1))
    return inter / union - (enclosing - union) / enclosing


def encode_deltas(target: Box, reference: Box) -> DeltaVec:
    """Parameterize `target` relative to `reference`."""
    tcx, tcy = target.center
    rcx, rcy = reference.center
    return DeltaVec(
        tx=(tcx - rcx) / reference.width,
        ty=(tcy - rcy) / reference.height,
        tw=math.log(target.width / reference.width),
        th=math.log(target.height / reference.height),
    )


def decode_deltas(delta: DeltaVec, reference: Box, clamp: float = DELTA_CLAMP) -> Box:
    """Inverse of encode_deltas; log-size components are clamped to +-clamp
    before exponentiation so untrained heads cannot overflow."""
    rcx, rcy = reference.center
    cx = rcx + delta.tx * reference.width
    cy = rcy + delta.ty * reference.height
    w = reference.width * math.exp(min(max(delta.tw, -clamp), clamp))
    h = reference.height * math.exp(min(max(delta.th, -clamp), clamp))
    return Box(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)


def nms(candidates: list[ScoredBox], iou_threshold: float) -> list[ScoredBox]:
    """Greedy score-descending suppression.

    Equal scores break toward the lower original index. Output is sorted by
    descending score, is a subset of the input, and no kept pair overlaps
    above `iou_threshold`.
    """
    if not (0.0 <= iou_threshold <= 1.0):
        raise ValueError(f"iou_threshold must be in [0, 1], got {iou_threshold}")
    order = sorted(range(len(candidates)), key=lambda i: (-candidates[i].score, i))
    kept: list[int] = []
    for i in order:
        if all(iou(candidates[i].box, candidates[j].box) <= iou_threshold for j in kept):
            kept.append(i)
    return [candidates[i] for i in kept]


def clip_box(b: Box, width: float, height: float) -> Box:
    """Clamp to [0, width] x [0, height]. A box that collapses entirely past a
    border becomes the 1-pixel box hugging that border."""
    if width <= 0 or height <= 0:
        raise ValueError("image dimensions must be positive")
    x1 = min(max(b.x1, 0.0), width)
    x2 = min(max(b.x2, 0.0), width)
    y1 = min(max(b.y1, 0.0), height)
    y2 = min(max(b.y2, 0.0), height)
    if x2 <= x1:
        x1, x2 = (width - 1.0, width) if x1 >= width else (0.0, 1.0)
    if y2 <= y1:
        y1, y2 = (height - 1.0, height) if y1 >= height else (0.0, 1.0)
    return Box(x1, y1, x2, y2)


# ---------------------------------------------------------------------------
# array helpers shared by assignment / detector hot paths
# ---------------------------------------------------------------------------

def boxes_to_array(boxes) -> np.ndarray:
    """Stack Box objects into an (N, 4) float array."""
    if not boxes:
        return np.zeros((0, 4), dtype=np.float64)
    return np.array([b.as_list() for b in boxes], dtype=np.float64)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of two (N, 4) / (M, 4) corner-box arrays -> (N, M)."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return inter / union


def encode_deltas_array(targets: np.ndarray, references: np.ndarray) -> np.ndarray:
    """Row-wise encode_deltas over (N, 4) corner arrays -> (N, 4) deltas."""
    t = np.asarray(targets, dtype=np.float64).reshape(-1, 4)
    r = np.asarray(references, dtype=np.float64).reshape(-1, 4)
    tw_, th_ = t[:, 2] - t[:, 0], t[:, 3] - t[:, 1]
    rw_, rh_ = r[:, 2] - r[:, 0], r[:, 3] - r[:, 1]
    out = np.empty_like(t)
    out[:, 0] = ((t[:, 0] + t[:, 2]) - (r[:, 0] + r[:, 2])) * 0.5 / rw_
    out[:, 1] = ((t[:, 1] + t[:, 3]) - (r[:, 1] + r[:, 3])) * 0.5 / rh_
    out[:, 2] = np.log(tw_ / rw_)
    out[:, 3] = np.log(th_ / rh_)
    return out


def decode_deltas_array(deltas: np.ndarray, references: np.ndarray,
                        clamp: float = DELTA_CLAMP) -> np.ndarray:
    """Row-wise decode_deltas -> (N, 4) corner array (unclipped)."""
    d = np.asarray(deltas, dtype=np.float64).reshape(-1, 4)
    r = np.asarray(references, dtype=np.float64).reshape(-1, 4)
    rw_, rh_ = r[:, 2] - r[:, 0], r[:, 3] - r[:, 1]
    cx = (r[:, 0] + r[:, 2]) * 0.5 + d[:, 0] * rw_
    cy = (r[:, 1] + r[:, 3]) * 0.5 + d[:, 1] * rh_
    w = rw_ * np.exp(np.clip(d[:, 2], -clamp, clamp))
    h = rh_ * np.exp(np.clip(d[:, 3], -clamp, clamp))
    return np.stack([cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], axis=1)
