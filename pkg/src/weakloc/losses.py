"""Training objectives: classification, regression, quality, the supervised
composite, the weighted-entropy constraint, and their combination.

Every loss returns both its value and the analytic gradient with respect to
its prediction inputs, so the network tape can be seeded directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .geometry import Box

PROB_EPS = 1e-7  # applied inside logs only, never to stored predictions

REG_SMOOTH_L1 = "smooth_l1"
REG_GIOU = "giou"

WE_SCOPE_ALL = "all"      # the weighted-entropy sum runs over every prediction
WE_SCOPE_BATCH = "batch"  # ... or over the sampled minibatch only


@dataclass(frozen=True)
class LossConfig:
    """All loss hyperparameters.

    lambda1/lambda2 weight the classification and regression terms, gamma and
    alpha shape the entropy re-weighting, tau1 <= tau2 bound the neglected
    confidence band, and eta balances the supervised term against the
    unsupervised one in the total objective.
    """

    lambda1: float = 1.0
    lambda2: float = 1.0
    gamma: float = 6.0
    alpha: float = 0.1
    tau1: float = 0.3
    tau2: float = 0.3
    eta: float = 0.125
    reg_kind: str = REG_SMOOTH_L1
    smooth_l1_beta: float = 1.0
    we_scope: str = WE_SCOPE_ALL

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("lambda1 and lambda2 must be non-negative")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if not (0.0 < self.alpha < 1.0):
            raise ValueError("alpha must lie in (0, 1)")
        if not (0.0 <= self.tau1 <= 1.0 and 0.0 <= self.tau2 <= 1.0):
            raise ValueError("tau1 and tau2 must lie in [0, 1]")
        if self.tau1 > self.tau2:
            raise ValueError("tau1 must be <= tau2")
        if self.eta < 0:
            raise ValueError("eta must be non-negative")
        if self.reg_kind not in (REG_SMOOTH_L1, REG_GIOU):
            raise ValueError(f"unknown reg_kind {self.reg_kind!r}")
        if self.smooth_l1_beta <= 0:
            raise ValueError("smooth_l1_beta must be positive")
        if self.we_scope not in (WE_SCOPE_ALL, WE_SCOPE_BATCH):
            raise ValueError(f"unknown we_scope {self.we_scope!r}")

    def with_tau(self, tau: float) -> "LossConfig":
        """Single-threshold variant: tau1 = tau2 = tau."""
        return replace(self, tau1=tau, tau2=tau)


def mild_focus_preset() -> LossConfig:
    """Milder focusing / stronger foreground weighting, tuned for wider object
    variety: gamma=4, alpha=0.25, tau=0.1, eta=0.03125."""
    return LossConfig(gamma=4.0, alpha=0.25, tau1=0.1, tau2=0.1, eta=0.03125)


@dataclass
class LossValue:
    """Loss value plus gradients aligned with the prediction inputs.

    grad_p is the gradient w.r.t. foreground probabilities (scalar for the
    single-sample losses, (N,) for batched ones). grad_t is the gradient
    w.r.t. the regression prediction: delta components for smooth L1, corner
    coordinates for GIoU.
    """

    value: float
    grad_p: np.ndarray | float | None = None
    grad_t: np.ndarray | None = None


def _clamped(p):
    return np.clip(p, PROB_EPS, 1.0 - PROB_EPS)


def bce(p: float, y: float) -> LossValue:
    """Binary cross-entropy of a single foreground probability."""
    pc = float(_clamped(p))
    value = -y * math.log(pc) - (1.0 - y) * math.log(1.0 - pc)
    grad = (pc - y) / (pc * (1.0 - pc))
    return LossValue(value=value, grad_p=grad)


def smooth_l1(t, t_star, beta: float) -> LossValue:
    """Smooth L1 over the 4 delta components, summed."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    tv = t.as_array() if hasattr(t, "as_array") else np.asarray(t, dtype=np.float64)
    sv = t_star.as_array() if hasattr(t_star, "as_array") else np.asarray(t_star, dtype=np.float64)
    d = tv - sv
    quad = np.abs(d) < beta
    value = float(np.sum(np.where(quad, 0.5 * d * d / beta, np.abs(d) - 0.5 * beta)))
    grad = np.where(quad, d / beta, np.sign(d))
    return LossValue(value=value, grad_t=grad)


def _giou_with_grad(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """GIoU of one corner-box pair and its gradient w.r.t. the pred corners."""
    x1, y1, x2, y2 = pred
    X1, Y1, X2, Y2 = target
    wp, hp = x2 - x1, y2 - y1
    area_p = wp * hp
    area_t = (X2 - X1) * (Y2 - Y1)

    iw = min(x2, X2) - max(x1, X1)
    ih = min(y2, Y2) - max(y1, Y1)
    inter = iw * ih if (iw > 0 and ih > 0) else 0.0
    union = area_p + area_t - inter
    cw = max(x2, X2) - min(x1, X1)
    ch = max(y2, Y2) - min(y1, Y1)
    enc = cw * ch
    value = inter / union - (enc - union) / enc

    live = iw > 0 and ih > 0
    d_inter = np.array([
        -ih if (live and x1 > X1) else 0.0,
        -iw if (live and y1 > Y1) else 0.0,
        ih if (live and x2 < X2) else 0.0,
        iw if (live and y2 < Y2) else 0.0,
    ])
    d_area = np.array([-hp, -wp, hp, wp])
    d_union = d_area - d_inter
    d_enc = np.array([
        -ch if x1 < X1 else 0.0,
        -cw if y1 < Y1 else 0.0,
        ch if x2 > X2 else 0.0,
        cw if y2 > Y2 else 0.0,
    ])
    # giou = inter/union - 1 + union/enc
    grad = (d_inter * union - inter * d_union) / union ** 2 \
        + (d_union * enc - union * d_enc) / enc ** 2
    return value, grad


def giou_loss(pred: Box, target: Box) -> LossValue:
    """1 - GIoU with the analytic derivative w.r.t. the predicted corners."""
    value, grad = _giou_with_grad(np.array(pred.as_list()), np.array(target.as_list()))
    return LossValue(value=1.0 - value, grad_t=-grad)


def supervised_loss(batch_p, batch_labels, batch_t, batch_t_star,
                    cfg: LossConfig) -> LossValue:
    """Composite pseudo-supervised objective.

    lambda1 * mean BCE over the batch plus lambda2 * mean regression loss over
    the positive samples; the regression term vanishes (no division) when the
    batch holds no positives. Row i of batch_t / batch_t_star is only read
    when batch_labels[i] == 1.
    """
    p = np.asarray(batch_p, dtype=np.float64).ravel()
    y = np.asarray(batch_labels, dtype=np.float64).ravel()
    if p.size == 0:
        raise ValueError("empty batch")
    if p.shape != y.shape:
        raise ValueError("batch_p and batch_labels must align")

    n_cls = p.size
    pc = _clamped(p)
    cls_value = float(np.mean(-y * np.log(pc) - (1.0 - y) * np.log(1.0 - pc)))
    grad_p = cfg.lambda1 / n_cls * (pc - y) / (pc * (1.0 - pc))

    pos = np.flatnonzero(y == 1.0)
    n_reg = pos.size
    reg_value = 0.0
    grad_t = np.zeros((n_cls, 4), dtype=np.float64)
    if n_reg and cfg.lambda2 > 0:
        t = np.asarray(batch_t, dtype=np.float64).reshape(n_cls, 4)
        ts = np.asarray(batch_t_star, dtype=np.float64).reshape(n_cls, 4)
        if cfg.reg_kind == REG_SMOOTH_L1:
            d = t[pos] - ts[pos]
            quad = np.abs(d) < cfg.smooth_l1_beta
            per = np.where(quad, 0.5 * d * d / cfg.smooth_l1_beta,
                           np.abs(d) - 0.5 * cfg.smooth_l1_beta)
            reg_value = float(per.sum()) / n_reg
            grad_t[pos] = cfg.lambda2 / n_reg * np.where(quad, d / cfg.smooth_l1_beta,
                                                         np.sign(d))
        else:  # GIoU over corner boxes
            total = 0.0
            for i in pos:
                g, dg = _giou_with_grad(t[i], ts[i])
                total += 1.0 - g
                grad_t[i] = cfg.lambda2 / n_reg * -dg
            reg_value = total / n_reg

    value = cfg.lambda1 * cls_value + cfg.lambda2 * reg_value
    return LossValue(value=value, grad_p=grad_p, grad_t=grad_t)


def we_weight(p: float, cfg: LossConfig) -> float:
    """Confidence-gated modulating factor of the weighted entropy.

    (1-alpha)*p^gamma below tau1, alpha*(1-p)^gamma above tau2, zero inside
    the closed band [tau1, tau2] (strict inequalities on both sides).
    """
    if p < cfg.tau1:
        return (1.0 - cfg.alpha) * p ** cfg.gamma
    if p > cfg.tau2:
        return cfg.alpha * (1.0 - p) ** cfg.gamma
    return 0.0


def weighted_entropy_loss(all_p, cfg: LossConfig) -> LossValue:
    """Mean re-weighted entropy over the prediction set.

    Each sample contributes weight(p) * (-p * log p); the weight's dependence
    on p is differentiated on its own branch, the branch indicator itself
    being piecewise constant. Gradients are evaluated at log-clamped p.
    """
    p = np.asarray(all_p, dtype=np.float64).ravel()
    if p.size == 0:
        return LossValue(value=0.0, grad_p=np.zeros(0, dtype=np.float64))

    n = p.size
    pc = _clamped(p)
    log_pc = np.log(pc)
    lo = p < cfg.tau1
    hi = p > cfg.tau2

    value = np.zeros(n, dtype=np.float64)
    grad = np.zeros(n, dtype=np.float64)
    g = cfg.gamma
    if np.any(lo):
        pl = pc[lo]
        value[lo] = (1.0 - cfg.alpha) * p[lo] ** g * (-p[lo] * log_pc[lo])
        grad[lo] = -(1.0 - cfg.alpha) * pl ** g * ((g + 1.0) * np.log(pl) + 1.0)
    if np.any(hi):
        ph = pc[hi]
        value[hi] = cfg.alpha * (1.0 - p[hi]) ** g * (-p[hi] * log_pc[hi])
        grad[hi] = -cfg.alpha * ((1.0 - ph) ** g * (np.log(ph) + 1.0)
                                 - g * (1.0 - ph) ** (g - 1.0) * ph * np.log(ph))
    return LossValue(value=float(value.sum()) / n, grad_p=grad / n)


def quality_loss(c: float, c_star: float) -> LossValue:
    """BCE of the predicted localization quality against a soft target."""
    cc = float(_clamped(c))
    value = -c_star * math.log(cc) - (1.0 - c_star) * math.log(1.0 - cc)
    grad = (cc - c_star) / (cc * (1.0 - cc))
    return LossValue(value=value, grad_p=grad)


def total_loss(sup: LossValue, unsup: LossValue, cfg: LossConfig) -> LossValue:
    """eta * supervised + unsupervised; gradients combine linearly.

    Component gradients are merged only when they cover the same sample set
    (matching shapes); a shape mismatch means the caller must combine them
    per index set itself and is rejected here.
    """
    value = cfg.eta * sup.value + unsup.value

    def combine(a, b):
        if a is None and b is None:
            return None
        if a is None:
            return np.asarray(b).copy() if isinstance(b, np.ndarray) else b
        if b is None:
            return cfg.eta * a
        a_arr, b_arr = np.asarray(a), np.asarray(b)
        if a_arr.shape != b_arr.shape:
            raise ValueError("cannot combine gradients over different sample sets")
        return cfg.eta * a_arr + b_arr

    return LossValue(value=value, grad_p=combine(sup.grad_p, unsup.grad_p),
                     grad_t=combine(sup.grad_t, unsup.grad_t))
