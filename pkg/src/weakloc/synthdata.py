"""Deterministic synthetic scenes: rendered shape images, tight ground-truth
boxes, noisy pseudo boxes, and simulated classification scores.

A dataset on disk is a directory with manifest.jsonl (one JSON record per
image), binary PPM images (P5 grayscale / P6 color, maxval 255), and one JSON
score vector per image.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import Box, boxes_to_array, clip_box, iou_matrix

# class id -> (base shape, fill style); the 3-class set is the solid prefix
CLASS_TABLE_3 = (
    ("circle", "solid"),
    ("square", "solid"),
    ("triangle", "solid"),
)
CLASS_TABLE_10 = CLASS_TABLE_3 + (
    ("circle", "ring"),
    ("square", "ring"),
    ("triangle", "ring"),
    ("circle", "speckled"),
    ("square", "speckled"),
    ("triangle", "speckled"),
    ("diamond", "solid"),
)


def class_table(num_classes: int):
    if num_classes == 3:
        return CLASS_TABLE_3
    if num_classes == 10:
        return CLASS_TABLE_10
    raise ValueError(f"supported class counts are 3 and 10, got {num_classes}")


@dataclass(frozen=True)
class SceneObject:
    class_id: int
    center: tuple[float, float]
    size: float
    fill: float


@dataclass(frozen=True)
class SceneSpec:
    """Full description of one scene; rendering is pure in (spec, seed)."""

    image_size: tuple[int, int]  # (width, height)
    objects: tuple[SceneObject, ...]
    num_classes: int = 3
    noise_level: float = 0.05
    gradient_direction: float = 0.0
    distractor_count: int = 0

    def __post_init__(self):
        if not 1 <= len(self.objects) <= 3:
            raise ValueError("scenes hold 1 to 3 objects")
        w, h = self.image_size
        nominal = []
        for obj in self.objects:
            if obj.size < 3.0:
                raise ValueError(f"object size {obj.size} too small to rasterize")
            if not 0 <= obj.class_id < self.num_classes:
                raise ValueError(f"class id {obj.class_id} out of range")
            cx, cy = obj.center
            half = obj.size / 2.0
            if cx - half < 0 or cy - half < 0 or cx + half > w or cy + half > h:
                raise ValueError(f"object at {obj.center} size {obj.size} leaves the image")
            nominal.append(Box(cx - half, cy - half, cx + half, cy + half))
        if len(nominal) > 1:
            m = iou_matrix(boxes_to_array(nominal), boxes_to_array(nominal))
            np.fill_diagonal(m, 0.0)
            if m.max() >= 0.2:
                raise ValueError("object overlap exceeds the IoU < 0.2 budget")


@dataclass(frozen=True)
class NoiseModel:
    """Pseudo-box corruption: Gaussian jitter, wrong-box swaps, drops."""

    jitter_sigma: float = 0.0
    wrong_box_prob: float = 0.0
    drop_prob: float = 0.0

    def __post_init__(self):
        if self.jitter_sigma < 0:
            raise ValueError("jitter_sigma must be non-negative")
        for name in ("wrong_box_prob", "drop_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")


@dataclass(frozen=True)
class ClassScoreModel:
    """Target accuracies of the simulated classification branch."""

    top1_acc: float = 0.8
    top5_acc: float = 0.95

    def __post_init__(self):
        if not (0.0 <= self.top1_acc <= 1.0 and 0.0 <= self.top5_acc <= 1.0):
            raise ValueError("accuracies must lie in [0, 1]")
        if self.top5_acc < self.top1_acc:
            raise ValueError("top5_acc must be >= top1_acc")


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

def _shape_mask(shape: str, cx: float, cy: float, size: float,
                width: int, height: int) -> np.ndarray:
    """Pixel-center rasterization of one shape."""
    ys, xs = np.mgrid[0:height, 0:width]
    px = xs + 0.5
    py = ys + 0.5
    half = size / 2.0
    if shape == "circle":
        return (px - cx) ** 2 + (py - cy) ** 2 <= half ** 2
    if shape == "square":
        return np.maximum(np.abs(px - cx), np.abs(py - cy)) <= half
    if shape == "diamond":
        return np.abs(px - cx) + np.abs(py - cy) <= half
    if shape == "triangle":
        # apex up: A=(cx, cy-half), B=(cx-half, cy+half), C=(cx+half, cy+half)
        ax, ay = cx, cy - half
        bx, by = cx - half, cy + half
        cx2, cy2 = cx + half, cy + half
        d1 = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
        d2 = (cx2 - bx) * (py - by) - (cy2 - by) * (px - bx)
        d3 = (ax - cx2) * (py - cy2) - (ay - cy2) * (px - cx2)
        return (d1 <= 0) & (d2 <= 0) & (d3 <= 0)  # y grows downward
    raise ValueError(f"unknown shape {shape!r}")


def render_scene(spec: SceneSpec, rng_seed) -> tuple[np.ndarray, list[Box], list[int]]:
    """Rasterize a scene; returns (uint8 image (H, W), gt boxes, class ids).

    Ground-truth boxes are the tight bounds of each object's lit pixels.
    Background = intensity gradient + Gaussian noise + distractor blobs,
    drawn before the objects so objects stay opaque.
    """
    w, h = spec.image_size
    table = class_table(spec.num_classes)
    rng = np.random.default_rng(rng_seed)

    ys, xs = np.mgrid[0:h, 0:w]
    ramp = (math.cos(spec.gradient_direction) * (xs / w - 0.5)
            + math.sin(spec.gradient_direction) * (ys / h - 0.5))
    image = 0.15 + 0.12 * ramp + rng.normal(0.0, 1.0, size=(h, w)) * spec.noise_level

    for _ in range(spec.distractor_count):
        dx = rng.uniform(0, w)
        dy = rng.uniform(0, h)
        radius = rng.uniform(1.5, 4.0)
        intensity = rng.uniform(0.2, 1.0)
        blob = (xs + 0.5 - dx) ** 2 + (ys + 0.5 - dy) ** 2 <= radius ** 2
        image[blob] = intensity

    gt_boxes: list[Box] = []
    gt_classes: list[int] = []
    for obj in spec.objects:
        shape, style = table[obj.class_id]
        cx, cy = obj.center
        mask = _shape_mask(shape, cx, cy, obj.size, w, h)
        if style == "ring":
            mask &= ~_shape_mask(shape, cx, cy, obj.size * 0.55, w, h)
        elif style == "speckled":
            mask &= rng.random((h, w)) < 0.7
        if not mask.any():
            raise ValueError(f"object {obj} rasterized to nothing")
        image[mask] = obj.fill
        rows = np.flatnonzero(mask.any(axis=1))
        cols = np.flatnonzero(mask.any(axis=0))
        gt_boxes.append(Box(float(cols[0]), float(rows[0]),
                            float(cols[-1] + 1), float(rows[-1] + 1)))
        gt_classes.append(obj.class_id)

    return (np.clip(image, 0.0, 1.0) * 255.0).round().astype(np.uint8), gt_boxes, gt_classes


@dataclass(frozen=True)
class SceneConfig:
    """Sampling ranges for random scenes."""

    image_size: tuple[int, int] = (64, 64)
    num_classes: int = 3
    min_objects: int = 1
    max_objects: int = 3
    min_size: float = 12.0
    max_size: float = 28.0
    min_fill: float = 0.35
    max_fill: float = 1.0
    noise_level: float = 0.05
    min_distractors: int = 0
    max_distractors: int = 3

    def __post_init__(self):
        if not 1 <= self.min_objects <= self.max_objects <= 3:
            raise ValueError("object counts must satisfy 1 <= min <= max <= 3")
        if self.min_size < 3.0 or self.max_size < self.min_size:
            raise ValueError("bad object size range")


def sample_scene(rng, cfg: SceneConfig) -> SceneSpec:
    """Draw a valid SceneSpec (placement retried until the overlap budget holds)."""
    rng = np.random.default_rng(rng)
    w, h = cfg.image_size
    count = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
    objects: list[SceneObject] = []
    placed: list[Box] = []
    for _ in range(count):
        for _attempt in range(200):
            size = float(rng.uniform(cfg.min_size, cfg.max_size))
            half = size / 2.0
            cx = float(rng.uniform(half, w - half))
            cy = float(rng.uniform(half, h - half))
            candidate = Box(cx - half, cy - half, cx + half, cy + half)
            if all(float(iou_matrix(boxes_to_array([candidate]),
                                    boxes_to_array([b]))[0, 0]) < 0.18
                   for b in placed):
                break
        else:
            raise RuntimeError("could not place objects within the overlap budget")
        placed.append(candidate)
        objects.append(SceneObject(
            class_id=int(rng.integers(cfg.num_classes)),
            center=(cx, cy),
            size=size,
            fill=float(rng.uniform(cfg.min_fill, cfg.max_fill)),
        ))
    return SceneSpec(
        image_size=cfg.image_size,
        objects=tuple(objects),
        num_classes=cfg.num_classes,
        noise_level=cfg.noise_level,
        gradient_direction=float(rng.uniform(0.0, 2.0 * math.pi)),
        distractor_count=int(rng.integers(cfg.min_distractors, cfg.max_distractors + 1)),
    )


# ---------------------------------------------------------------------------
# corruption + simulated classification
# ---------------------------------------------------------------------------

PROVENANCE_JITTER = "jitter"
PROVENANCE_WRONG = "wrong"
PROVENANCE_DROP = "drop"


def corrupt_boxes(gt_boxes: list[Box], noise: NoiseModel, image_size,
                  rng) -> tuple[list[Box], list[str]]:
    """Corrupt ground truth into pseudo boxes.

    Per box: dropped with drop_prob; else swapped for a random box with IoU
    <= 0.1 against every ground truth with wrong_box_prob; else center and
    log-size jittered by Gaussian(0, jitter_sigma) in box-size units. Returns
    the surviving pseudo boxes plus a provenance tag per ground-truth box.
    """
    rng = np.random.default_rng(rng)
    w, h = image_size
    gt_arr = boxes_to_array(gt_boxes)
    pseudo: list[Box] = []
    provenance: list[str] = []
    for box in gt_boxes:
        if rng.random() < noise.drop_prob:
            provenance.append(PROVENANCE_DROP)
            continue
        if rng.random() < noise.wrong_box_prob:
            pseudo.append(_random_far_box(gt_arr, (w, h), rng))
            provenance.append(PROVENANCE_WRONG)
            continue
        jit = rng.normal(0.0, 1.0, size=4) * noise.jitter_sigma
        cx, cy = box.center
        bw = box.width * math.exp(jit[2])
        bh = box.height * math.exp(jit[3])
        cx += jit[0] * box.width
        cy += jit[1] * box.height
        pseudo.append(clip_box(Box(cx - bw / 2, cy - bh / 2, cx + bw / 2, cy + bh / 2), w, h))
        provenance.append(PROVENANCE_JITTER)
    return pseudo, provenance


def _random_far_box(gt_arr: np.ndarray, image_size, rng) -> Box:
    w, h = image_size
    lo = min(w, h) / 8.0
    hi = min(w, h) / 3.0
    for _ in range(1000):
        bw = rng.uniform(lo, hi)
        bh = rng.uniform(lo, hi)
        cx = rng.uniform(0, w)
        cy = rng.uniform(0, h)
        cand = clip_box(Box(cx - bw / 2, cy - bh / 2, cx + bw / 2, cy + bh / 2), w, h)
        if gt_arr.size == 0 or iou_matrix(boxes_to_array([cand]), gt_arr).max() <= 0.1:
            return cand
    raise RuntimeError("could not place a wrong box away from every ground truth")


def simulate_class_scores(gt_class: int, model: ClassScoreModel, num_classes: int,
                          rng) -> np.ndarray:
    """Score vector whose argmax hits gt_class with probability top1_acc and
    whose top-5 contains it with probability top5_acc (for > 5 classes)."""
    if num_classes < 2:
        raise ValueError("need at least 2 classes")
    rng = np.random.default_rng(rng)
    u = rng.random()
    if u < model.top1_acc:
        rank = 0
    elif u < model.top5_acc:
        rank = 1 + int(rng.integers(min(4, num_classes - 1)))
    elif num_classes > 5:
        rank = 5 + int(rng.integers(num_classes - 5))
    else:
        rank = 1 + int(rng.integers(num_classes - 1))  # degenerate: everything is top-5

    values = rng.random(num_classes)
    while np.unique(values).size < num_classes:
        values = rng.random(num_classes)
    values = np.sort(values)[::-1]
    scores = np.empty(num_classes)
    others = np.array([c for c in range(num_classes) if c != gt_class])
    other_ranks = np.array([r for r in range(num_classes) if r != rank])
    scores[gt_class] = values[rank]
    scores[rng.permutation(others)] = values[other_ranks]
    return scores


# ---------------------------------------------------------------------------
# PPM + dataset on disk
# ---------------------------------------------------------------------------

def write_ppm(path, image: np.ndarray):
    """Binary PPM: P5 for (H, W) grayscale, P6 for (H, W, 3), maxval 255."""
    image = np.asarray(image, dtype=np.uint8)
    if image.ndim == 2:
        magic = b"P5"
    elif image.ndim == 3 and image.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"cannot write image of shape {image.shape}")
    h, w = image.shape[:2]
    with open(path, "wb") as fh:
        fh.write(magic + b"\n" + f"{w} {h}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    magic = blob[:2]
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"{path}: not a binary PPM file")
    # header: three whitespace-separated integers, then exactly one whitespace
    # byte before the pixel block (which may itself contain whitespace bytes)
    pos = 2
    values = []
    try:
        while len(values) < 3:
            while blob[pos:pos + 1].isspace():
                pos += 1
            start = pos
            while not blob[pos:pos + 1].isspace():
                pos += 1
            values.append(int(blob[start:pos]))
        pos += 1
    except (IndexError, ValueError) as exc:
        raise ValueError(f"{path}: malformed PPM header") from exc
    w, h, maxval = values
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    channels = 1 if magic == b"P5" else 3
    data = np.frombuffer(blob, dtype=np.uint8, count=h * w * channels, offset=pos)
    return data.reshape((h, w) if channels == 1 else (h, w, 3)).copy()


@dataclass
class ManifestEntry:
    """One dataset record; paths are relative to the manifest's directory."""

    id: str
    image_path: str
    gt_boxes: list[Box]
    gt_classes: list[int]
    pseudo_boxes: list[Box]
    pseudo_provenance: list[str]
    class_scores_path: str

    @property
    def image_class(self) -> int:
        """Image-level class label: the class of the first object."""
        return self.gt_classes[0]

    def to_json(self) -> str:
        return json.dumps({
            "id": self.id,
            "image_path": self.image_path,
            "gt_boxes": [b.as_list() for b in self.gt_boxes],
            "gt_classes": self.gt_classes,
            "pseudo_boxes": [b.as_list() for b in self.pseudo_boxes],
            "pseudo_provenance": self.pseudo_provenance,
            "class_scores_path": self.class_scores_path,
        })

    @staticmethod
    def from_json(line: str) -> "ManifestEntry":
        raw = json.loads(line)
        return ManifestEntry(
            id=raw["id"],
            image_path=raw["image_path"],
            gt_boxes=[Box.from_sequence(b) for b in raw["gt_boxes"]],
            gt_classes=[int(c) for c in raw["gt_classes"]],
            pseudo_boxes=[Box.from_sequence(b) for b in raw["pseudo_boxes"]],
            pseudo_provenance=list(raw["pseudo_provenance"]),
            class_scores_path=raw["class_scores_path"],
        )


def read_manifest(path) -> list[ManifestEntry]:
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for number, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                entries.append(ManifestEntry.from_json(line))
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{number}: bad manifest record: {exc}") from exc
    return entries


def load_image(entry: ManifestEntry, root) -> np.ndarray:
    """Image as float64 in [0, 1], shape (H, W) or (H, W, 3)."""
    return read_ppm(Path(root) / entry.image_path).astype(np.float64) / 255.0


def load_class_scores(entry: ManifestEntry, root) -> np.ndarray:
    with open(Path(root) / entry.class_scores_path, "r", encoding="utf-8") as fh:
        return np.asarray(json.load(fh), dtype=np.float64)


def generate_dataset(out_dir, count: int, scene_cfg: SceneConfig,
                     noise: NoiseModel, scores: ClassScoreModel,
                     seed: int, channels: int = 1) -> Path:
    """Write `count` images + scores + manifest.jsonl under out_dir.

    Every image derives its own seed from (seed, index), so generation is
    order-independent and reproducible byte for byte. channels=3 emits P6
    files with the rendered intensity replicated per channel.
    """
    if channels not in (1, 3):
        raise ValueError("channels must be 1 or 3")
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "scores").mkdir(parents=True, exist_ok=True)
    lines = []
    for index in range(count):
        children = np.random.SeedSequence([int(seed), index]).spawn(4)
        spec = sample_scene(np.random.default_rng(children[0]), scene_cfg)
        image, gt_boxes, gt_classes = render_scene(spec, children[1])
        if channels == 3:
            image = np.repeat(image[:, :, None], 3, axis=2)
        pseudo, provenance = corrupt_boxes(gt_boxes, noise, scene_cfg.image_size,
                                           np.random.default_rng(children[2]))
        score_vec = simulate_class_scores(gt_classes[0], scores, scene_cfg.num_classes,
                                          np.random.default_rng(children[3]))
        name = f"img_{index:06d}"
        write_ppm(out_dir / "images" / f"{name}.ppm", image)
        with open(out_dir / "scores" / f"{name}.json", "w", encoding="utf-8") as fh:
            json.dump([float(v) for v in score_vec], fh)
        entry = ManifestEntry(
            id=name,
            image_path=f"images/{name}.ppm",
            gt_boxes=gt_boxes,
            gt_classes=gt_classes,
            pseudo_boxes=pseudo,
            pseudo_provenance=provenance,
            class_scores_path=f"scores/{name}.json",
        )
        lines.append(entry.to_json())
    manifest = out_dir / "manifest.jsonl"
    with open(manifest, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + ("\n" if lines else ""))
    return manifest
