"""Anchor generation, positive/negative/ignore labeling against pseudo boxes,
and ratio-controlled minibatch sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Box, boxes_to_array, encode_deltas_array, iou_matrix

LABEL_NEGATIVE = 0
LABEL_POSITIVE = 1
LABEL_IGNORE = -1

NO_MATCH = -1


@dataclass(frozen=True)
class AnchorSet:
    """Predetermined reference boxes tiled over the image grid.

    Ordering is row-major over grid cells, then scale, then aspect ratio.
    Anchors may extend past the image borders; they are never clipped here.
    """

    boxes: np.ndarray  # (N, 4) corner boxes
    stride: int
    scales: tuple[float, ...]
    ratios: tuple[float, ...]
    image_size: tuple[int, int]  # (width, height)

    def __len__(self) -> int:
        return self.boxes.shape[0]

    def box(self, i: int) -> Box:
        return Box.from_sequence(self.boxes[i])

    @property
    def per_location(self) -> int:
        return len(self.scales) * len(self.ratios)

    @property
    def grid_shape(self) -> tuple[int, int]:
        """(rows, cols) of the anchor grid."""
        w, h = self.image_size
        return h // self.stride, w // self.stride


def generate_anchors(image_size, stride: int, scales, aspect_ratios) -> AnchorSet:
    """Tile scale/ratio anchor templates over every grid cell center.

    A template with scale s and ratio r has width s*sqrt(r) and height
    s/sqrt(r), i.e. equal area s^2 across ratios.
    """
    w, h = int(image_size[0]), int(image_size[1])
    scales = tuple(float(s) for s in scales)
    ratios = tuple(float(r) for r in aspect_ratios)
    if not scales or not ratios:
        raise ValueError("scales and aspect_ratios must be non-empty")
    if stride <= 0 or w % stride or h % stride:
        raise ValueError(f"stride {stride} must divide image size {w}x{h}")

    half = np.array([(s * np.sqrt(r) / 2.0, s / np.sqrt(r) / 2.0)
                     for s in scales for r in ratios])  # (A, 2) half-extents
    cols = np.arange(w // stride) * stride + stride / 2.0
    rows = np.arange(h // stride) * stride + stride / 2.0
    cy, cx = np.meshgrid(rows, cols, indexing="ij")
    centers = np.stack([cx.ravel(), cy.ravel()], axis=1)  # row-major cells

    boxes = np.empty((centers.shape[0] * half.shape[0], 4), dtype=np.float64)
    for k, (hw, hh) in enumerate(half):
        boxes[k::half.shape[0], 0] = centers[:, 0] - hw
        boxes[k::half.shape[0], 1] = centers[:, 1] - hh
        boxes[k::half.shape[0], 2] = centers[:, 0] + hw
        boxes[k::half.shape[0], 3] = centers[:, 1] + hh
    return AnchorSet(boxes=boxes, stride=int(stride), scales=scales, ratios=ratios,
                     image_size=(w, h))


@dataclass
class AssignmentResult:
    """Per-anchor label plus the matched pseudo-box index for positives."""

    labels: np.ndarray      # (N,) int, LABEL_* values
    matched_gt: np.ndarray  # (N,) int, NO_MATCH where not positive
    max_iou: np.ndarray     # (N,) float


def assign_labels(anchors: AnchorSet, pseudo_boxes: list[Box],
                  fg_thresh: float = 0.7, bg_thresh: float = 0.3) -> AssignmentResult:
    """IoU-threshold assignment with a forced best match per pseudo box.

    An anchor is positive when its best IoU is >= fg_thresh, negative when it
    is < bg_thresh against every pseudo box, otherwise ignored. Any pseudo box
    without a threshold positive forces its highest-IoU anchor to positive;
    when two forced matches contest one anchor, the later pseudo box wins it.
    A box that loses its only anchor that way is re-covered with its best
    still-unmatched anchor, so every pseudo box keeps at least one positive
    whenever enough anchors exist. Ties break to the lowest anchor index.
    """
    if fg_thresh < bg_thresh:
        raise ValueError(f"fg_thresh {fg_thresh} must be >= bg_thresh {bg_thresh}")
    n = len(anchors)
    if not pseudo_boxes:
        return AssignmentResult(
            labels=np.full(n, LABEL_NEGATIVE, dtype=np.int64),
            matched_gt=np.full(n, NO_MATCH, dtype=np.int64),
            max_iou=np.zeros(n, dtype=np.float64),
        )

    overlaps = iou_matrix(anchors.boxes, boxes_to_array(pseudo_boxes))  # (N, G)
    max_iou = overlaps.max(axis=1)
    argmax_gt = overlaps.argmax(axis=1)  # ties -> lowest gt index

    labels = np.full(n, LABEL_IGNORE, dtype=np.int64)
    labels[max_iou < bg_thresh] = LABEL_NEGATIVE
    labels[max_iou >= fg_thresh] = LABEL_POSITIVE
    matched = np.where(labels == LABEL_POSITIVE, argmax_gt, NO_MATCH)

    col_max = overlaps.max(axis=0)
    for j in range(len(pseudo_boxes)):
        if col_max[j] < fg_thresh:
            i = int(overlaps[:, j].argmax())  # ties -> lowest anchor index
            labels[i] = LABEL_POSITIVE
            matched[i] = j
    for j in range(len(pseudo_boxes)):  # re-cover boxes whose anchor was taken
        if not (matched == j).any():
            free = np.flatnonzero(matched == NO_MATCH)
            if free.size == 0:
                break  # fewer anchors than boxes: coverage is infeasible
            i = int(free[overlaps[free, j].argmax()])
            labels[i] = LABEL_POSITIVE
            matched[i] = j
    return AssignmentResult(labels=labels, matched_gt=matched, max_iou=max_iou)


@dataclass
class SampleBatch:
    """Training minibatch: positive indices first, then negatives."""

    indices: np.ndarray        # (B,) anchor indices
    target_labels: np.ndarray  # (B,) {0, 1}
    target_deltas: np.ndarray  # (pos_count, 4) regression targets
    matched_gt: np.ndarray     # (pos_count,) pseudo-box index per positive
    pos_count: int
    neg_count: int

    def __len__(self) -> int:
        return self.pos_count + self.neg_count

    @property
    def is_empty(self) -> bool:
        return len(self) == 0


def sample_minibatch(assignment: AssignmentResult, anchors: AnchorSet,
                     pseudo_boxes: list[Box], batch_size: int,
                     ratio_pos_neg: tuple[int, int], rng) -> SampleBatch:
    """Draw a minibatch with the configured positive:negative ratio.

    The positive quota is floor(batch * pos / (pos + neg)); negatives fill the
    remainder. When one side is scarce the other tops the batch up, so the
    batch only shrinks when candidates of both kinds run out. Deterministic
    for a fixed generator state; an empty batch (no candidates at all) comes
    back with zero counts.
    """
    if batch_size < 2:
        raise ValueError(f"batch_size must be >= 2, got {batch_size}")
    rp, rn = int(ratio_pos_neg[0]), int(ratio_pos_neg[1])
    if rp < 1 or rn < 1:
        raise ValueError(f"ratio must have pos, neg >= 1, got {ratio_pos_neg}")
    rng = np.random.default_rng(rng)

    pos_pool = np.flatnonzero(assignment.labels == LABEL_POSITIVE)
    neg_pool = np.flatnonzero(assignment.labels == LABEL_NEGATIVE)
    pos_perm = rng.permutation(pos_pool)
    neg_perm = rng.permutation(neg_pool)

    pos_quota = batch_size * rp // (rp + rn)
    n_pos = min(pos_quota, pos_perm.size)
    n_neg = min(batch_size - n_pos, neg_perm.size)
    if n_pos + n_neg < batch_size:  # negatives ran out; top up with positives
        n_pos = min(batch_size - n_neg, pos_perm.size)

    pos_idx = pos_perm[:n_pos]
    neg_idx = neg_perm[:n_neg]
    indices = np.concatenate([pos_idx, neg_idx])
    target_labels = np.concatenate([np.ones(n_pos, dtype=np.int64),
                                    np.zeros(n_neg, dtype=np.int64)])
    matched = assignment.matched_gt[pos_idx]
    if n_pos:
        gt = boxes_to_array(pseudo_boxes)[matched]
        target_deltas = encode_deltas_array(gt, anchors.boxes[pos_idx])
    else:
        target_deltas = np.zeros((0, 4), dtype=np.float64)
    return SampleBatch(indices=indices, target_labels=target_labels,
                       target_deltas=target_deltas, matched_gt=matched,
                       pos_count=int(n_pos), neg_count=int(n_neg))
