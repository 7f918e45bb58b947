"""Batch orchestration: dataset generation, training runs with per-epoch
evaluation, standalone evaluation, ablation sweeps, and overlay rendering.

Every artifact a run emits is a pure function of (config, seed); wall time is
the one exception and lives in its own timing.txt.
"""

from __future__ import annotations

import dataclasses
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import (RunConfig, ValidationError, config_hash, emit_config,
                     parse_config, parse_ratio, validate_config)
from .detector import (BCDConfig, BCDModel, SCRConfig, SCRModel, TrainSettings,
                       bcd_predict, bcd_train_step, scr_forward, scr_train_step)
from .evaluation import (MetricsReport, PredictionRecord, evaluate_records,
                         gt_known_loc, read_predictions, write_predictions)
from .geometry import ScoredBox
from .optim import SGD, cosine_lr, save_checkpoint
from .synthdata import (ClassScoreModel, NoiseModel, SceneConfig,
                        load_class_scores, load_image, read_manifest, read_ppm,
                        write_ppm)

MODEL_KINDS = ("bcd", "bcd_no_we", "scr")

SWEEP_AXES = ("eta", "gamma_alpha", "tau", "ratio")


@dataclass
class EpochStats:
    epoch: int
    loss_sup: float
    loss_unsup: float
    loss_total: float
    gtknown_single: float
    gtknown_multi: float


@dataclass
class RunRecord:
    epochs: list[EpochStats]
    final_report: MetricsReport
    seed: int
    config_hash: str
    model_kind: str
    wall_time_s: float

    def record_csv(self) -> str:
        lines = ["epoch,loss_sup,loss_unsup,loss_total,gtknown_single,gtknown_multi"]
        for e in self.epochs:
            lines.append(f"{e.epoch},{e.loss_sup!r},{e.loss_unsup!r},{e.loss_total!r},"
                         f"{e.gtknown_single!r},{e.gtknown_multi!r}")
        return "\n".join(lines) + "\n"

    def meta_csv(self) -> str:
        rows = [("seed", self.seed), ("config_hash", self.config_hash),
                ("model_kind", self.model_kind), ("epochs", len(self.epochs))]
        return "key,value\n" + "\n".join(f"{k},{v}" for k, v in rows) + "\n"


# ---------------------------------------------------------------------------
# dataset generation
# ---------------------------------------------------------------------------

def _scene_config(cfg: RunConfig) -> SceneConfig:
    d = cfg.data
    return SceneConfig(
        image_size=(d.image_width, d.image_height),
        num_classes=d.num_classes,
        min_objects=d.min_objects,
        max_objects=d.max_objects,
        min_size=d.min_size,
        max_size=d.max_size,
        min_fill=d.min_fill,
        max_fill=d.max_fill,
        noise_level=d.noise_level,
        min_distractors=d.min_distractors,
        max_distractors=d.max_distractors,
    )


def cmd_gen_data(cfg: RunConfig, out_dir) -> Path:
    """Write train/ and test/ splits plus the effective config under out_dir."""
    from .synthdata import generate_dataset

    validate_config(cfg)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scene_cfg = _scene_config(cfg)
    noise = NoiseModel(jitter_sigma=cfg.data.jitter_sigma,
                       wrong_box_prob=cfg.data.wrong_box_prob,
                       drop_prob=cfg.data.drop_prob)
    scores = ClassScoreModel(top1_acc=cfg.data.top1_acc, top5_acc=cfg.data.top5_acc)
    for split, count, tag in (("train", cfg.data.count_train, 101),
                              ("test", cfg.data.count_test, 202)):
        split_seed = int(np.random.SeedSequence([cfg.seed, tag]).generate_state(1)[0])
        generate_dataset(out_dir / split, count, scene_cfg, noise, scores, split_seed,
                         channels=cfg.data.channels)
    (out_dir / "config.txt").write_text(emit_config(cfg), encoding="utf-8",
                                        newline="\n")
    return out_dir


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

class _Split:
    """Manifest + lazily cached images for one dataset split."""

    def __init__(self, manifest_path: Path):
        if not manifest_path.exists():
            raise FileNotFoundError(f"missing dataset manifest {manifest_path}")
        self.root = manifest_path.parent
        self.entries = read_manifest(manifest_path)
        self._cache: dict[int, np.ndarray] = {}

    def __len__(self):
        return len(self.entries)

    def image(self, i: int) -> np.ndarray:
        if i not in self._cache:
            image = load_image(self.entries[i], self.root)
            if image.ndim == 3:  # (H, W, C) on disk -> (C, H, W) for the models
                image = image.transpose(2, 0, 1)
            self._cache[i] = image
        return self._cache[i]


def _build_model(cfg: RunConfig, model_kind: str, seed):
    image_size = (cfg.data.image_width, cfg.data.image_height)
    if model_kind == "scr":
        return SCRModel(SCRConfig(image_size=image_size,
                                  channels_in=cfg.data.channels,
                                  backbone_channels=cfg.model.backbone_channels),
                        seed=seed, smooth_l1_beta=cfg.loss.smooth_l1_beta)
    return BCDModel(BCDConfig(image_size=image_size,
                              channels_in=cfg.data.channels,
                              backbone_channels=cfg.model.backbone_channels,
                              anchor_stride=cfg.model.anchor_stride,
                              anchor_scales=cfg.model.anchor_scales,
                              anchor_ratios=cfg.model.anchor_ratios,
                              quality_head=cfg.model.quality_head,
                              quality_kind=cfg.model.quality_kind),
                    cfg.loss, seed=seed)


def predict_split(model, model_kind: str, split: _Split,
                  cfg: RunConfig) -> list[PredictionRecord]:
    """Prediction records (with dataset class scores) for every split image."""
    records = []
    for i, entry in enumerate(split.entries):
        image = split.image(i)
        if model_kind == "scr":
            boxes = [ScoredBox(scr_forward(model, image), 1.0)]
        else:
            boxes = bcd_predict(model, image, cfg.eval.score_thresh,
                                cfg.eval.nms_thresh, cfg.eval.max_outputs)
        records.append(PredictionRecord(
            image_id=entry.id,
            boxes=boxes,
            class_scores=load_class_scores(entry, split.root),
        ))
    return records


def _gtknown_percent(records, entries, k: int) -> float:
    hits = sum(gt_known_loc(r, e.gt_boxes, k) for r, e in zip(records, entries))
    return 100.0 * hits / len(entries) if entries else 0.0


def cmd_train(cfg: RunConfig, model_kind: str, out_dir) -> RunRecord:
    """Train a model per the config schedule, evaluating after every epoch.

    bcd_no_we is the ablation: the unsupervised term is forced to zero and
    everything else, the random stream included, matches a bcd run exactly.
    """
    validate_config(cfg)
    if model_kind not in MODEL_KINDS:
        raise ValidationError(f"model kind must be one of {MODEL_KINDS}, got {model_kind!r}")
    started = time.perf_counter()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    data_root = Path(cfg.data.dir)
    train_split = _Split(data_root / "train" / "manifest.jsonl")
    test_split = _Split(data_root / "test" / "manifest.jsonl")

    model = _build_model(cfg, model_kind, np.random.SeedSequence([cfg.seed, 11]))
    optimizer = SGD(model.param_groups(cfg.optim.head_lr_mult, cfg.optim.weight_decay),
                    momentum=cfg.optim.momentum)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 22]))
    settings = TrainSettings(fg_thresh=cfg.model.fg_thresh,
                             bg_thresh=cfg.model.bg_thresh,
                             batch_size=cfg.optim.batch_size,
                             ratio_pos_neg=parse_ratio(cfg.optim.ratio),
                             use_we=model_kind == "bcd")

    epochs: list[EpochStats] = []
    records: list[PredictionRecord] = []
    for epoch in range(cfg.optim.epochs):
        lr = cosine_lr(epoch, cfg.optim.epochs, cfg.optim.base_lr)
        order = rng.permutation(len(train_split))
        sums = np.zeros(3)
        steps = 0
        for i in order:
            entry = train_split.entries[i]
            image = train_split.image(i)
            if model_kind == "scr":
                if not entry.pseudo_boxes:
                    continue
                loss = scr_train_step(model, optimizer, image, entry.pseudo_boxes[0], lr)
                sums += (loss, 0.0, loss)
            else:
                sums += bcd_train_step(model, optimizer, image, entry.pseudo_boxes,
                                       rng, lr, settings)
            steps += 1
        means = sums / steps if steps else sums
        records = predict_split(model, model_kind, test_split, cfg)
        epochs.append(EpochStats(
            epoch=epoch + 1,
            loss_sup=float(means[0]),
            loss_unsup=float(means[1]),
            loss_total=float(means[2]),
            gtknown_single=_gtknown_percent(records, test_split.entries, cfg.eval.k_single),
            gtknown_multi=_gtknown_percent(records, test_split.entries, cfg.eval.k_multi),
        ))

    report = evaluate_records(test_split.entries,
                              {r.image_id: r for r in records},
                              k_single=cfg.eval.k_single, k_multi=cfg.eval.k_multi)
    record = RunRecord(epochs=epochs, final_report=report, seed=cfg.seed,
                       config_hash=config_hash(cfg), model_kind=model_kind,
                       wall_time_s=time.perf_counter() - started)

    for name, text in (("config.txt", emit_config(cfg)),
                       ("record.csv", record.record_csv()),
                       ("metrics.csv", report.to_csv()),
                       ("meta.csv", record.meta_csv())):
        (out_dir / name).write_text(text, encoding="utf-8", newline="\n")
    write_predictions(out_dir / "predictions.jsonl", records)
    save_checkpoint(out_dir / "checkpoint.ckpt", model.state_dict())
    (out_dir / "timing.txt").write_text(f"{record.wall_time_s:.3f}\n", encoding="utf-8")
    return record


# ---------------------------------------------------------------------------
# standalone evaluation
# ---------------------------------------------------------------------------

def cmd_eval(manifest_path, predictions_path, k_single: int = 1, k_multi: int = 5,
             out_csv=None) -> MetricsReport:
    entries = read_manifest(manifest_path)
    records = read_predictions(predictions_path)
    report = evaluate_records(entries, records, k_single=k_single, k_multi=k_multi)
    if out_csv is not None:
        Path(out_csv).parent.mkdir(parents=True, exist_ok=True)
        Path(out_csv).write_text(report.to_csv(), encoding="utf-8", newline="\n")
    return report


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

def _apply_axis(cfg_text: str, axis: str, value: str) -> RunConfig:
    cfg = parse_config(cfg_text)
    if axis == "eta":
        cfg.loss = dataclasses.replace(cfg.loss, eta=float(value))
    elif axis == "gamma_alpha":
        gamma, _, alpha = value.partition(":")
        cfg.loss = dataclasses.replace(cfg.loss, gamma=float(gamma), alpha=float(alpha))
    elif axis == "tau":
        cfg.loss = cfg.loss.with_tau(float(value))
    elif axis == "ratio":
        parse_ratio(value)
        cfg.optim.ratio = value
    else:
        raise ValidationError(f"sweep axis must be one of {SWEEP_AXES}, got {axis!r}")
    return cfg


def _sweep_one(args) -> tuple[str, int, str, dict]:
    cfg_text, axis, value, seed, model_kind, run_dir = args
    cfg = _apply_axis(cfg_text, axis, value)
    cfg.seed = seed
    try:
        record = cmd_train(cfg, model_kind, run_dir)
    except Exception as exc:  # partial failures become sweep rows, not aborts
        return value, seed, f"failed:{type(exc).__name__}", {}
    r = record.final_report
    return value, seed, "ok", {
        "top1_loc": r.top1_loc,
        "top5_loc_single": r.top5_loc_single,
        "top5_loc_multi": r.top5_loc_multi,
        "gtknown_single": r.gtknown_single,
        "gtknown_multi": r.gtknown_multi,
    }


def sweep_run_dir(out_dir, axis: str, value: str, seed: int) -> Path:
    safe = value.replace(":", "-")
    return Path(out_dir) / f"{axis}_{safe}_seed{seed}"


def cmd_sweep(cfg: RunConfig, axis: str, values: list[str], seeds: list[int],
              out_dir, model_kind: str = "bcd", parallel: int = 1) -> Path:
    """One training run per (value, seed), aggregated into sweep.csv.

    Runs are sequential by default; parallel > 1 launches that many worker
    processes, one run each, preserving per-run determinism. Output paths are
    never reused: an existing run directory is a hard error.
    """
    validate_config(cfg)
    if axis not in SWEEP_AXES:
        raise ValidationError(f"sweep axis must be one of {SWEEP_AXES}, got {axis!r}")
    if not values:
        raise ValidationError("sweep needs at least one value")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    jobs = []
    cfg_text = emit_config(cfg)
    for value in values:
        _apply_axis(cfg_text, axis, value)  # fail fast on bad values
        for seed in seeds:
            run_dir = sweep_run_dir(out_dir, axis, value, seed)
            if run_dir.exists():
                raise ValidationError(f"refusing to reuse sweep output path {run_dir}")
            jobs.append((cfg_text, axis, value, seed, model_kind, str(run_dir)))

    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(_sweep_one, jobs))
    else:
        results = [_sweep_one(job) for job in jobs]

    lines = ["axis,value,seed,status,top1_loc,top5_loc_single,top5_loc_multi,"
             "gtknown_single,gtknown_multi"]
    for value, seed, status, metrics in results:
        if metrics:
            tail = ",".join(f"{metrics[k]:.6f}" for k in
                            ("top1_loc", "top5_loc_single", "top5_loc_multi",
                             "gtknown_single", "gtknown_multi"))
        else:
            tail = ",,,,"
        lines.append(f"{axis},{value},{seed},{status},{tail}")
    sweep_csv = out_dir / "sweep.csv"
    sweep_csv.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    return sweep_csv


# ---------------------------------------------------------------------------
# overlays
# ---------------------------------------------------------------------------

GT_INTENSITY = 255
PRED_INTENSITY = 160


def _draw_outline(image: np.ndarray, box, intensity: int):
    h, w = image.shape[:2]
    x1 = min(max(int(round(box.x1)), 0), w - 1)
    y1 = min(max(int(round(box.y1)), 0), h - 1)
    x2 = min(max(int(round(box.x2)), 1), w)
    y2 = min(max(int(round(box.y2)), 1), h)
    image[y1, x1:x2] = intensity
    image[y2 - 1, x1:x2] = intensity
    image[y1:y2, x1] = intensity
    image[y1:y2, x2 - 1] = intensity


def cmd_render_overlays(manifest_path, predictions_path, out_dir) -> int:
    """Re-emit every image with 1-pixel outlines: ground truth at max
    intensity, predictions at mid intensity. Returns the image count."""
    entries = read_manifest(manifest_path)
    records = read_predictions(predictions_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    root = Path(manifest_path).parent
    for entry in entries:
        image = read_ppm(root / entry.image_path).copy()
        record = records.get(entry.id)
        if record is not None:
            for scored in record.boxes:
                _draw_outline(image, scored.box, PRED_INTENSITY)
        for gt in entry.gt_boxes:
            _draw_outline(image, gt, GT_INTENSITY)
        write_ppm(out_dir / f"{entry.id}_overlay.ppm", image)
    return len(entries)
