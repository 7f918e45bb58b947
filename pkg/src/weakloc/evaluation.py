"""Localization metrics over prediction files: Top-1 Loc, Top-5 Loc, and
GT-known Loc, each in a single-box (top prediction only) and a multi-box
variant.

Predictions file: one JSON record per line with fields id, boxes (each
[x1, y1, x2, y2, score], sorted by descending score) and class_scores.
Metrics emit as CSV with header metric,value,count.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .geometry import Box, ScoredBox, iou
from .synthdata import ManifestEntry, read_manifest

IOU_CORRECT = 0.5  # a prediction counts only with overlap strictly above this


@dataclass
class PredictionRecord:
    image_id: str
    boxes: list[ScoredBox]          # sorted by descending score
    class_scores: np.ndarray | None

    def __post_init__(self):
        scores = [b.score for b in self.boxes]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise ValueError(f"{self.image_id}: boxes must be sorted by descending score")

    def to_json(self) -> str:
        return json.dumps({
            "id": self.image_id,
            "boxes": [[*b.box.as_list(), float(b.score)] for b in self.boxes],
            "class_scores": [float(v) for v in self.class_scores]
            if self.class_scores is not None else None,
        })

    @staticmethod
    def from_json(line: str) -> "PredictionRecord":
        raw = json.loads(line)
        boxes = [ScoredBox(Box.from_sequence(row[:4]), float(row[4]))
                 for row in raw["boxes"]]
        scores = raw.get("class_scores")
        return PredictionRecord(
            image_id=raw["id"],
            boxes=boxes,
            class_scores=np.asarray(scores, dtype=np.float64) if scores is not None else None,
        )


def read_predictions(path) -> dict[str, PredictionRecord]:
    records: dict[str, PredictionRecord] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for number, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = PredictionRecord.from_json(line)
            except (ValueError, KeyError) as exc:
                raise ValueError(f"{path}:{number}: bad prediction record: {exc}") from exc
            records[record.image_id] = record
    return records


def write_predictions(path, records: list[PredictionRecord]):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for record in records:
            fh.write(record.to_json() + "\n")


@dataclass
class MetricsReport:
    """Aggregate percentages; single = top prediction only, multi = top k."""

    top1_loc: float
    top5_loc_single: float
    top5_loc_multi: float
    gtknown_single: float
    gtknown_multi: float
    image_count: int

    def to_csv(self) -> str:
        rows = [
            ("top1_loc", self.top1_loc),
            ("top5_loc_single", self.top5_loc_single),
            ("top5_loc_multi", self.top5_loc_multi),
            ("gtknown_single", self.gtknown_single),
            ("gtknown_multi", self.gtknown_multi),
        ]
        lines = ["metric,value,count"]
        lines += [f"{name},{value:.6f},{self.image_count}" for name, value in rows]
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# per-image rules
# ---------------------------------------------------------------------------

def box_correct(pred: Box, gt_boxes: list[Box]) -> bool:
    """True iff the prediction overlaps any ground truth with IoU > 0.5."""
    if not gt_boxes:
        raise ValueError("gt_boxes must be non-empty")
    return any(iou(pred, gt) > IOU_CORRECT for gt in gt_boxes)


def gt_known_loc(record: PredictionRecord, gt_boxes: list[Box], k: int) -> bool:
    """True iff any of the first k predictions is correct (class given)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return any(box_correct(b.box, gt_boxes) for b in record.boxes[:k])


def _class_rank(class_scores: np.ndarray, gt_class: int) -> int:
    """1-based rank of the true class; ties break toward lower class index."""
    order = np.argsort(-np.asarray(class_scores), kind="stable")
    return int(np.flatnonzero(order == gt_class)[0]) + 1


def top1_loc(record: PredictionRecord, gt_boxes: list[Box], gt_class: int) -> bool:
    """Top-1 class correct AND top prediction correct."""
    if record.class_scores is None:
        raise ValueError(f"{record.image_id}: class scores required for top1_loc")
    return _class_rank(record.class_scores, gt_class) == 1 \
        and gt_known_loc(record, gt_boxes, k=1)


def top5_loc(record: PredictionRecord, gt_boxes: list[Box], gt_class: int,
             k: int) -> bool:
    """True class within the top 5 AND any of the first k boxes correct."""
    if record.class_scores is None:
        raise ValueError(f"{record.image_id}: class scores required for top5_loc")
    return _class_rank(record.class_scores, gt_class) <= 5 \
        and gt_known_loc(record, gt_boxes, k=k)


# ---------------------------------------------------------------------------
# dataset-level aggregation
# ---------------------------------------------------------------------------

def evaluate_records(entries: list[ManifestEntry],
                     records: dict[str, PredictionRecord],
                     k_single: int = 1, k_multi: int = 5) -> MetricsReport:
    hits = np.zeros(5, dtype=np.int64)
    for entry in entries:
        if entry.id not in records:
            raise KeyError(f"no prediction record for image id {entry.id!r}")
        record = records[entry.id]
        gt_class = entry.image_class
        hits += np.array([
            top1_loc(record, entry.gt_boxes, gt_class),
            top5_loc(record, entry.gt_boxes, gt_class, k=k_single),
            top5_loc(record, entry.gt_boxes, gt_class, k=k_multi),
            gt_known_loc(record, entry.gt_boxes, k=k_single),
            gt_known_loc(record, entry.gt_boxes, k=k_multi),
        ], dtype=np.int64)
    count = len(entries)
    values = 100.0 * hits / count if count else np.zeros(5)
    return MetricsReport(
        top1_loc=float(values[0]),
        top5_loc_single=float(values[1]),
        top5_loc_multi=float(values[2]),
        gtknown_single=float(values[3]),
        gtknown_multi=float(values[4]),
        image_count=count,
    )


def evaluate_dataset(manifest_path, predictions_path,
                     k_single: int = 1, k_multi: int = 5) -> MetricsReport:
    """Evaluate a predictions file against a dataset manifest."""
    entries = read_manifest(manifest_path)
    records = read_predictions(predictions_path)
    return evaluate_records(entries, records, k_single=k_single, k_multi=k_multi)
