"""The toy binary-class detector (shared conv backbone, per-anchor probability
and box-regression heads, optional quality head) and the single-box regression
baseline, with their training and inference procedures."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .assignment import (AnchorSet, SampleBatch, assign_labels, generate_anchors,
                         sample_minibatch)
from .geometry import (Box, DELTA_CLAMP, ScoredBox, boxes_to_array, clip_box,
                       decode_deltas_array, iou, nms)
from .losses import (LossConfig, WE_SCOPE_ALL, supervised_loss,
                     weighted_entropy_loss, REG_SMOOTH_L1)
from .optim import ParamGroup

QUALITY_IOU = "iou"
QUALITY_CENTERNESS = "centerness"

# sigmoid(CLS_BIAS_INIT) ~= 0.01: keeps the dense head from swamping early
# training with foreground-background imbalance.
CLS_BIAS_INIT = math.log(0.01 / 0.99)


@dataclass(frozen=True)
class BCDConfig:
    """Architecture switches for the binary-class detector."""

    image_size: tuple[int, int] = (64, 64)  # (width, height)
    channels_in: int = 1
    backbone_channels: tuple[int, ...] = (16, 32, 64, 64)  # one stride-2 block each
    anchor_stride: int = 16
    anchor_scales: tuple[float, ...] = (24.0,)
    anchor_ratios: tuple[float, ...] = (1.0,)
    quality_head: bool = False
    quality_kind: str = QUALITY_CENTERNESS

    def __post_init__(self):
        if 2 ** len(self.backbone_channels) != self.anchor_stride:
            raise ValueError(
                f"{len(self.backbone_channels)} stride-2 blocks reach stride "
                f"{2 ** len(self.backbone_channels)}, not anchor stride {self.anchor_stride}")
        if self.quality_kind not in (QUALITY_IOU, QUALITY_CENTERNESS):
            raise ValueError(f"unknown quality_kind {self.quality_kind!r}")


@dataclass(frozen=True)
class TrainSettings:
    """Assignment and sampling knobs for one training step."""

    fg_thresh: float = 0.7
    bg_thresh: float = 0.3
    batch_size: int = 256
    ratio_pos_neg: tuple[int, int] = (1, 4)
    use_we: bool = True


@dataclass
class DetectorOutput:
    """Per-anchor foreground probability, regression deltas, optional quality."""

    p: np.ndarray                 # (N,)
    deltas: np.ndarray            # (N, 4)
    quality: np.ndarray | None    # (N,)


class _ForwardTensors(NamedTuple):
    p: ad.Tensor
    deltas: ad.Tensor
    quality: ad.Tensor | None


def _kaiming(rng, shape, fan_in):
    return rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)


class BCDModel:
    """Binary-class detector with an attached anchor set and loss config."""

    def __init__(self, cfg: BCDConfig, loss_cfg: LossConfig, seed: int = 0):
        self.cfg = cfg
        self.loss_cfg = loss_cfg
        self.anchors: AnchorSet = generate_anchors(
            cfg.image_size, cfg.anchor_stride, cfg.anchor_scales, cfg.anchor_ratios)
        self.params: dict[str, ad.Tensor] = {}
        self._init_params(np.random.default_rng(seed))

    def _param(self, name, data):
        t = ad.Tensor(data, requires_grad=True, name=name)
        self.params[name] = t
        return t

    def _init_params(self, rng):
        cfg = self.cfg
        a = self.anchors.per_location
        c_in = cfg.channels_in
        for i, c_out in enumerate(cfg.backbone_channels):
            self._param(f"backbone.{i}.weight",
                        _kaiming(rng, (c_out, c_in, 3, 3), c_in * 9))
            self._param(f"backbone.{i}.bias", np.zeros(c_out))
            c_in = c_out
        self._param("cls_head.weight", rng.normal(0.0, 0.01, size=(a, c_in, 1, 1)))
        self._param("cls_head.bias", np.full(a, CLS_BIAS_INIT))
        self._param("reg_head.weight", rng.normal(0.0, 0.01, size=(4 * a, c_in, 1, 1)))
        self._param("reg_head.bias", np.zeros(4 * a))
        if cfg.quality_head:
            self._param("quality_head.weight", rng.normal(0.0, 0.01, size=(a, c_in, 1, 1)))
            self._param("quality_head.bias", np.zeros(a))

    # -- parameter plumbing ---------------------------------------------------

    def param_groups(self, head_lr_mult: float, weight_decay: float) -> list[ParamGroup]:
        def pick(head: bool, bias: bool):
            return [t for n, t in self.params.items()
                    if n.startswith(("cls_", "reg_", "quality_")) == head
                    and n.endswith("bias") == bias]

        return [
            ParamGroup(pick(False, False), 1.0, weight_decay),
            ParamGroup(pick(False, True), 1.0, 0.0),
            ParamGroup(pick(True, False), head_lr_mult, weight_decay),
            ParamGroup(pick(True, True), head_lr_mult, 0.0),
        ]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        for n, t in self.params.items():
            if n not in state:
                raise ValueError(f"checkpoint missing parameter {n!r}")
            if state[n].shape != t.data.shape:
                raise ValueError(f"shape mismatch for {n!r}: "
                                 f"{state[n].shape} vs {t.data.shape}")
            t.data = state[n].astype(np.float64).copy()

    # -- forward ----------------------------------------------------------------

    def _check_image(self, image: np.ndarray) -> np.ndarray:
        w, h = self.cfg.image_size
        image = np.asarray(image, dtype=np.float64)
        if image.ndim == 2 and self.cfg.channels_in == 1:
            image = image[None, :, :]
        if image.shape != (self.cfg.channels_in, h, w):
            raise ValueError(f"expected image of shape ({self.cfg.channels_in}, {h}, {w}), "
                             f"got {image.shape}")
        return image[None]  # (1, C, H, W)

    def forward_tensors(self, image: np.ndarray) -> _ForwardTensors:
        x = ad.Tensor(self._check_image(image))
        for i in range(len(self.cfg.backbone_channels)):
            x = ad.relu(ad.conv2d(x, self.params[f"backbone.{i}.weight"],
                                  self.params[f"backbone.{i}.bias"], stride=2, pad=1))
        a = self.anchors.per_location
        rows, cols = self.anchors.grid_shape

        def head_flat(prefix, channels_per_anchor):
            out = ad.conv2d(x, self.params[f"{prefix}.weight"], self.params[f"{prefix}.bias"])
            if channels_per_anchor == 1:
                out = ad.reshape(out, (a, rows, cols))
                out = ad.transpose(out, (1, 2, 0))
                return ad.reshape(out, (rows * cols * a,))
            out = ad.reshape(out, (a, channels_per_anchor, rows, cols))
            out = ad.transpose(out, (2, 3, 0, 1))
            return ad.reshape(out, (rows * cols * a, channels_per_anchor))

        p = ad.sigmoid(head_flat("cls_head", 1))
        deltas = head_flat("reg_head", 4)
        quality = ad.sigmoid(head_flat("quality_head", 1)) if self.cfg.quality_head else None
        return _ForwardTensors(p=p, deltas=deltas, quality=quality)


def bcd_forward(model: BCDModel, image: np.ndarray) -> DetectorOutput:
    """Inference forward pass: per-anchor probabilities, raw deltas, quality."""
    with ad.no_grad():
        fwd = model.forward_tensors(image)
    return DetectorOutput(
        p=fwd.p.data,
        deltas=fwd.deltas.data,
        quality=fwd.quality.data if fwd.quality is not None else None,
    )


def bcd_predict(model: BCDModel, image: np.ndarray, score_thresh: float,
                nms_thresh: float, max_outputs: int,
                use_quality: bool | None = None) -> list[ScoredBox]:
    """Decode, clip, score, suppress, truncate.

    The quality head, when present and enabled, only rescales scores as p * c;
    box geometry is untouched by the toggle.
    """
    if not (0.0 <= score_thresh <= 1.0 and 0.0 <= nms_thresh <= 1.0):
        raise ValueError("thresholds must lie in [0, 1]")
    out = bcd_forward(model, image)
    if use_quality is None:
        use_quality = model.cfg.quality_head
    scores = out.p * out.quality if (use_quality and out.quality is not None) else out.p
    corners = decode_deltas_array(out.deltas, model.anchors.boxes)
    w, h = model.cfg.image_size
    candidates = [
        ScoredBox(clip_box(Box.from_sequence(corners[i]), w, h), float(scores[i]))
        for i in np.flatnonzero(scores >= score_thresh)
    ]
    return nms(candidates, nms_thresh)[:max_outputs]


def quality_target(anchor: Box, matched_gt: Box, kind: str,
                   predicted: Box | None = None) -> float:
    """Soft target for the quality head of a positive sample.

    kind="iou" scores the decoded prediction against its matched box (the
    prediction must be supplied); kind="centerness" scores how centered the
    anchor sits inside the matched box, 0 when its center falls outside.
    """
    if kind == QUALITY_IOU:
        if predicted is None:
            raise ValueError("iou quality target needs the decoded prediction")
        return iou(predicted, matched_gt)
    if kind != QUALITY_CENTERNESS:
        raise ValueError(f"unknown quality kind {kind!r}")
    cx, cy = anchor.center
    left, right = cx - matched_gt.x1, matched_gt.x2 - cx
    top, bottom = cy - matched_gt.y1, matched_gt.y2 - cy
    if min(left, right, top, bottom) <= 0.0:
        return 0.0
    return math.sqrt((min(left, right) / max(left, right))
                     * (min(top, bottom) / max(top, bottom)))


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def _decode_on_tape(deltas_sel: ad.Tensor, refs: np.ndarray):
    """Differentiable delta decode; returns the four (P,) corner tensors."""
    rw = refs[:, 2] - refs[:, 0]
    rh = refs[:, 3] - refs[:, 1]
    rcx = (refs[:, 0] + refs[:, 2]) * 0.5
    rcy = (refs[:, 1] + refs[:, 3]) * 0.5
    cx = ad.add(ad.mul(deltas_sel[:, 0], rw), rcx)
    cy = ad.add(ad.mul(deltas_sel[:, 1], rh), rcy)
    w = ad.mul(ad.exp(ad.clip(deltas_sel[:, 2], -DELTA_CLAMP, DELTA_CLAMP)), rw)
    h = ad.mul(ad.exp(ad.clip(deltas_sel[:, 3], -DELTA_CLAMP, DELTA_CLAMP)), rh)
    x1 = ad.add(cx, ad.mul(w, -0.5))
    y1 = ad.add(cy, ad.mul(h, -0.5))
    x2 = ad.add(cx, ad.mul(w, 0.5))
    y2 = ad.add(cy, ad.mul(h, 0.5))
    return x1, y1, x2, y2


def bcd_loss_graph(model: BCDModel, image: np.ndarray, batch: SampleBatch,
                   pseudo_boxes: list[Box], use_we: bool = True):
    """Forward pass plus loss bridges; returns (sup, unsup, total) scalar tensors.

    Splitting this out of the train step keeps the whole pipeline replayable
    with a frozen minibatch, which the finite-difference checks rely on.
    """
    cfg = model.loss_cfg
    fwd = model.forward_tensors(image)

    if batch.is_empty:
        sup_tensor = ad.Tensor(0.0)
    else:
        p_sel = ad.gather(fwd.p, batch.indices)
        n_batch = len(batch)
        n_pos = batch.pos_count
        t_rows = np.zeros((n_batch, 4))
        t_star_rows = np.zeros((n_batch, 4))
        reg_seed_target = None
        corner_tensors = None
        if n_pos:
            pos_anchor_idx = batch.indices[:n_pos]
            d_sel = ad.gather(fwd.deltas, pos_anchor_idx)
            if cfg.reg_kind == REG_SMOOTH_L1:
                t_rows[:n_pos] = d_sel.data
                t_star_rows[:n_pos] = batch.target_deltas
                reg_seed_target = d_sel
            else:
                refs = model.anchors.boxes[pos_anchor_idx]
                corner_tensors = _decode_on_tape(d_sel, refs)
                t_rows[:n_pos] = np.stack([c.data for c in corner_tensors], axis=1)
                t_star_rows[:n_pos] = boxes_to_array(pseudo_boxes)[batch.matched_gt]

        sup_lv = supervised_loss(p_sel.data, batch.target_labels, t_rows, t_star_rows, cfg)
        seeds = [(p_sel, sup_lv.grad_p)]
        if n_pos:
            grad_rows = sup_lv.grad_t[:n_pos]
            if reg_seed_target is not None:
                seeds.append((reg_seed_target, grad_rows))
            else:
                seeds.extend((c, grad_rows[:, j]) for j, c in enumerate(corner_tensors))
        sup_tensor = ad.attach_scalar(sup_lv.value, seeds)

        if model.cfg.quality_head and n_pos:
            sup_tensor = ad.add(sup_tensor, _quality_term(model, fwd, batch, pseudo_boxes))

    if use_we:
        we_input = fwd.p if cfg.we_scope == WE_SCOPE_ALL else ad.gather(fwd.p, batch.indices)
        we_lv = weighted_entropy_loss(we_input.data, cfg)
        unsup_tensor = ad.attach_scalar(we_lv.value, [(we_input, we_lv.grad_p)])
    else:
        unsup_tensor = ad.Tensor(0.0)

    total_tensor = ad.add(ad.mul(sup_tensor, cfg.eta), unsup_tensor)
    return sup_tensor, unsup_tensor, total_tensor


def _quality_term(model: BCDModel, fwd: _ForwardTensors, batch: SampleBatch,
                  pseudo_boxes: list[Box]) -> ad.Tensor:
    """Mean quality BCE over positives, bridged onto the quality tensor."""
    from .losses import PROB_EPS

    n_pos = batch.pos_count
    pos_anchor_idx = batch.indices[:n_pos]
    c_sel = ad.gather(fwd.quality, pos_anchor_idx)
    decoded = decode_deltas_array(fwd.deltas.data[pos_anchor_idx],
                                  model.anchors.boxes[pos_anchor_idx])
    targets = np.empty(n_pos)
    for k in range(n_pos):
        gt_box = pseudo_boxes[batch.matched_gt[k]]
        targets[k] = quality_target(
            model.anchors.box(pos_anchor_idx[k]), gt_box, model.cfg.quality_kind,
            predicted=Box.from_sequence(decoded[k]))
    cc = np.clip(c_sel.data, PROB_EPS, 1.0 - PROB_EPS)
    value = float(np.mean(-targets * np.log(cc) - (1.0 - targets) * np.log(1.0 - cc)))
    grad = (cc - targets) / (cc * (1.0 - cc)) / n_pos
    return ad.attach_scalar(value, [(c_sel, grad)])


def bcd_train_step(model: BCDModel, optimizer, image: np.ndarray,
                   pseudo_boxes: list[Box], rng, lr: float,
                   train: TrainSettings) -> tuple[float, float, float]:
    """One SGD step: assign, sample, compute losses, backprop, update.

    Returns (supervised, unsupervised, total) loss values for the step.
    """
    assignment = assign_labels(model.anchors, pseudo_boxes,
                               train.fg_thresh, train.bg_thresh)
    batch = sample_minibatch(assignment, model.anchors, pseudo_boxes,
                             train.batch_size, train.ratio_pos_neg, rng)
    optimizer.zero_grad()
    sup_t, unsup_t, total_t = bcd_loss_graph(model, image, batch, pseudo_boxes,
                                             use_we=train.use_we)
    ad.backward(total_t)
    optimizer.fill_missing_grads()
    optimizer.step(lr)
    return float(sup_t.data), float(unsup_t.data), float(total_t.data)


# ---------------------------------------------------------------------------
# single-box regression baseline
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SCRConfig:
    image_size: tuple[int, int] = (64, 64)
    channels_in: int = 1
    backbone_channels: tuple[int, ...] = (16, 32, 64, 64)


class SCRModel:
    """Backbone + global pooling + linear head emitting one normalized box.

    The head's four sigmoided outputs are read as (cx, cy, w, h) fractions of
    the image, which keeps every decoded box valid regardless of parameters.
    """

    def __init__(self, cfg: SCRConfig, seed: int = 0, smooth_l1_beta: float = 1.0):
        self.cfg = cfg
        self.smooth_l1_beta = smooth_l1_beta
        self.params: dict[str, ad.Tensor] = {}
        rng = np.random.default_rng(seed)
        c_in = cfg.channels_in
        for i, c_out in enumerate(cfg.backbone_channels):
            self.params[f"backbone.{i}.weight"] = ad.Tensor(
                _kaiming(rng, (c_out, c_in, 3, 3), c_in * 9), requires_grad=True,
                name=f"backbone.{i}.weight")
            self.params[f"backbone.{i}.bias"] = ad.Tensor(
                np.zeros(c_out), requires_grad=True, name=f"backbone.{i}.bias")
            c_in = c_out
        self.params["head.weight"] = ad.Tensor(
            rng.normal(0.0, 0.01, size=(c_in, 4)), requires_grad=True, name="head.weight")
        self.params["head.bias"] = ad.Tensor(
            np.zeros(4), requires_grad=True, name="head.bias")

    def param_groups(self, head_lr_mult: float, weight_decay: float) -> list[ParamGroup]:
        def pick(head: bool, bias: bool):
            return [t for n, t in self.params.items()
                    if n.startswith("head.") == head and n.endswith("bias") == bias]

        return [
            ParamGroup(pick(False, False), 1.0, weight_decay),
            ParamGroup(pick(False, True), 1.0, 0.0),
            ParamGroup(pick(True, False), head_lr_mult, weight_decay),
            ParamGroup(pick(True, True), head_lr_mult, 0.0),
        ]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        for n, t in self.params.items():
            if n not in state or state[n].shape != t.data.shape:
                raise ValueError(f"bad checkpoint entry for {n!r}")
            t.data = state[n].astype(np.float64).copy()

    def _check_image(self, image: np.ndarray) -> np.ndarray:
        w, h = self.cfg.image_size
        image = np.asarray(image, dtype=np.float64)
        if image.ndim == 2 and self.cfg.channels_in == 1:
            image = image[None, :, :]
        if image.shape != (self.cfg.channels_in, h, w):
            raise ValueError(f"expected image of shape ({self.cfg.channels_in}, {h}, {w}), "
                             f"got {image.shape}")
        return image[None]

    def forward_tensor(self, image: np.ndarray) -> ad.Tensor:
        """Normalized (cx, cy, w, h), shape (4,)."""
        x = ad.Tensor(self._check_image(image))
        for i in range(len(self.cfg.backbone_channels)):
            x = ad.relu(ad.conv2d(x, self.params[f"backbone.{i}.weight"],
                                  self.params[f"backbone.{i}.bias"], stride=2, pad=1))
        x = ad.mean(ad.mean(x, axis=3), axis=2)  # (1, C)
        x = ad.linear(x, self.params["head.weight"], self.params["head.bias"])
        return ad.sigmoid(ad.reshape(x, (4,)))


def _scr_decode(normalized: np.ndarray, image_size: tuple[int, int]) -> Box:
    w_img, h_img = image_size
    cx, cy, w, h = normalized
    box = Box(cx * w_img - 0.5 * w * w_img, cy * h_img - 0.5 * h * h_img,
              cx * w_img + 0.5 * w * w_img, cy * h_img + 0.5 * h * h_img)
    return clip_box(box, w_img, h_img)


def _scr_encode(box: Box, image_size: tuple[int, int]) -> np.ndarray:
    w_img, h_img = image_size
    cx, cy = box.center
    return np.array([cx / w_img, cy / h_img, box.width / w_img, box.height / h_img])


def scr_forward(model: SCRModel, image: np.ndarray) -> Box:
    """The single predicted box, in pixels, clipped to the image."""
    with ad.no_grad():
        out = model.forward_tensor(image)
    return _scr_decode(out.data, model.cfg.image_size)


def scr_train_step(model: SCRModel, optimizer, image: np.ndarray,
                   pseudo_box: Box, lr: float) -> float:
    """Smooth-L1 step on the normalized coordinates against one pseudo box."""
    from .losses import smooth_l1

    out = model.forward_tensor(image)
    lv = smooth_l1(out.data, _scr_encode(pseudo_box, model.cfg.image_size),
                   model.smooth_l1_beta)
    optimizer.zero_grad()
    ad.backward(ad.attach_scalar(lv.value, [(out, lv.grad_t)]))
    optimizer.fill_missing_grads()
    optimizer.step(lr)
    return lv.value
