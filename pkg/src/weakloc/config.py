"""Run configuration: dataclass sections, the flat key=value config format,
and CLI overrides. The effective config is echoed into every run directory,
and its hash identifies the run."""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field, fields

from .losses import LossConfig


class ValidationError(ValueError):
    """Bad configuration or command usage; maps to exit code 1."""


@dataclass
class DataConfig:
    dir: str = "data/default"
    image_width: int = 64
    image_height: int = 64
    channels: int = 1
    num_classes: int = 3
    count_train: int = 200
    count_test: int = 100
    min_objects: int = 1
    max_objects: int = 3
    min_size: float = 12.0
    max_size: float = 28.0
    min_fill: float = 0.35
    max_fill: float = 1.0
    noise_level: float = 0.05
    min_distractors: int = 0
    max_distractors: int = 3
    jitter_sigma: float = 0.0
    wrong_box_prob: float = 0.0
    drop_prob: float = 0.0
    top1_acc: float = 0.8
    top5_acc: float = 0.95


@dataclass
class ModelConfig:
    anchor_stride: int = 16
    anchor_scales: tuple[float, ...] = (24.0,)
    anchor_ratios: tuple[float, ...] = (1.0,)
    backbone_channels: tuple[int, ...] = (16, 32, 64, 64)
    quality_head: bool = False
    quality_kind: str = "centerness"
    fg_thresh: float = 0.7
    bg_thresh: float = 0.3


@dataclass
class OptimConfig:
    base_lr: float = 0.004
    head_lr_mult: float = 2.0
    momentum: float = 0.9
    weight_decay: float = 0.0001
    epochs: int = 30
    batch_size: int = 256
    ratio: str = "1:4"  # positive:negative sampling ratio


@dataclass
class EvalConfig:
    score_thresh: float = 0.05
    nms_thresh: float = 0.5
    max_outputs: int = 100
    k_single: int = 1
    k_multi: int = 5


@dataclass
class RunConfig:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)


_SECTIONS = ("data", "model", "loss", "optim", "eval")


def parse_ratio(text: str) -> tuple[int, int]:
    try:
        pos, neg = text.split(":")
        pos, neg = int(pos), int(neg)
    except ValueError as exc:
        raise ValidationError(f"ratio must look like '1:4', got {text!r}") from exc
    if pos < 1 or neg < 1:
        raise ValidationError(f"ratio parts must be >= 1, got {text!r}")
    return pos, neg


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(text: str, kind):
    text = text.strip()
    if kind is bool:
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise ValidationError(f"expected a boolean, got {text!r}")
    if kind is int:
        return int(text)
    if kind is float:
        return float(text)
    if kind is str:
        return text
    # tuples: infer the element type from the annotation string
    if "tuple" in str(kind):
        elem = int if "int" in str(kind) else float
        return tuple(elem(part) for part in text.split(",") if part.strip())
    raise ValidationError(f"unsupported config field type {kind!r}")


def emit_config(cfg: RunConfig) -> str:
    """Canonical flat key=value text; stable field order, LF line endings."""
    lines = [f"seed={cfg.seed}"]
    for section in _SECTIONS:
        obj = getattr(cfg, section)
        for f in fields(obj):
            lines.append(f"{section}.{f.name}={_format_value(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"


def _field_map(obj) -> dict[str, dataclasses.Field]:
    return {f.name: f for f in fields(obj)}


def apply_override(cfg: RunConfig, key: str, raw: str):
    """Set one dotted key (e.g. loss.gamma) from its textual value."""
    if key == "seed":
        cfg.seed = int(raw)
        return
    if key == "loss.tau":  # virtual key: the single-threshold form tau1 = tau2
        try:
            cfg.loss = cfg.loss.with_tau(float(raw))
        except ValueError as exc:
            raise ValidationError(str(exc)) from exc
        return
    if "." not in key:
        raise ValidationError(f"unknown config key {key!r}")
    section, name = key.split(".", 1)
    if section not in _SECTIONS:
        raise ValidationError(f"unknown config section {section!r}")
    obj = getattr(cfg, section)
    fmap = _field_map(obj)
    if name not in fmap:
        raise ValidationError(f"unknown config key {key!r}")
    try:
        value = _parse_value(raw, _resolve_type(fmap[name]))
    except (ValueError, TypeError) as exc:
        raise ValidationError(f"bad value for {key}: {raw!r} ({exc})") from exc
    if section == "loss":
        # LossConfig is frozen and self-validating: rebuild it
        try:
            cfg.loss = dataclasses.replace(cfg.loss, **{name: value})
        except ValueError as exc:
            raise ValidationError(str(exc)) from exc
    else:
        setattr(obj, name, value)


def _resolve_type(f: dataclasses.Field):
    mapping = {"int": int, "float": float, "str": str, "bool": bool}
    return mapping.get(f.type, f.type) if isinstance(f.type, str) else f.type


def parse_config(text: str) -> RunConfig:
    cfg = RunConfig()
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValidationError(f"line {number}: expected key=value, got {line!r}")
        key, _, raw = line.partition("=")
        apply_override(cfg, key.strip(), raw)
    return cfg


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def validate_config(cfg: RunConfig):
    """Domain checks beyond per-field parsing; raises ValidationError."""
    d, m, o, e = cfg.data, cfg.model, cfg.optim, cfg.eval
    checks = [
        (d.image_width > 0 and d.image_height > 0, "image dimensions must be positive"),
        (d.channels in (1, 3), "data.channels must be 1 or 3"),
        (d.num_classes in (3, 10), "data.num_classes must be 3 or 10"),
        (d.count_train >= 0 and d.count_test >= 0, "dataset counts must be >= 0"),
        (1 <= d.min_objects <= d.max_objects <= 3, "object counts must satisfy 1 <= min <= max <= 3"),
        (3.0 <= d.min_size <= d.max_size, "object size range invalid"),
        (0.0 <= d.noise_level, "noise level must be >= 0"),
        (0.0 <= d.jitter_sigma, "jitter sigma must be >= 0"),
        (0.0 <= d.wrong_box_prob <= 1.0, "wrong_box_prob must lie in [0, 1]"),
        (0.0 <= d.drop_prob <= 1.0, "drop_prob must lie in [0, 1]"),
        (0.0 <= d.top1_acc <= d.top5_acc <= 1.0, "need 0 <= top1_acc <= top5_acc <= 1"),
        (m.anchor_stride > 0, "anchor stride must be positive"),
        (d.image_width % m.anchor_stride == 0 and d.image_height % m.anchor_stride == 0,
         "anchor stride must divide the image size"),
        (2 ** len(m.backbone_channels) == m.anchor_stride,
         "backbone depth must reach the anchor stride (one stride-2 block each)"),
        (len(m.anchor_scales) > 0 and len(m.anchor_ratios) > 0, "anchor templates missing"),
        (m.quality_kind in ("iou", "centerness"), "quality kind must be iou or centerness"),
        (0.0 <= m.bg_thresh <= m.fg_thresh <= 1.0, "need 0 <= bg_thresh <= fg_thresh <= 1"),
        (o.base_lr > 0, "base_lr must be positive"),
        (o.head_lr_mult > 0, "head_lr_mult must be positive"),
        (0.0 <= o.momentum < 1.0, "momentum must lie in [0, 1)"),
        (o.weight_decay >= 0, "weight decay must be >= 0"),
        (o.epochs >= 1, "epochs must be >= 1"),
        (o.batch_size >= 2, "batch size must be >= 2"),
        (0.0 <= e.score_thresh <= 1.0, "score threshold must lie in [0, 1]"),
        (0.0 <= e.nms_thresh <= 1.0, "nms threshold must lie in [0, 1]"),
        (e.max_outputs >= 1, "max_outputs must be >= 1"),
        (e.k_single >= 1 and e.k_multi >= e.k_single, "need 1 <= k_single <= k_multi"),
    ]
    for ok, message in checks:
        if not ok:
            raise ValidationError(message)
    parse_ratio(cfg.optim.ratio)


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(emit_config(cfg).encode("utf-8")).hexdigest()[:16]
