"""Detection losses with analytic gradients.

Regression uses a smooth L1 with branch point at 1/sigma^2 applied to the
seven codec residuals (heading, three position deltas, three log sizes);
classification uses a bilateral focal loss over probabilities, with a
numerically safe logit-space entry point. Batch losses average the
classification term over non-ignored units and the regression term over
positive units, summed 1:1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geom import Box7, wrap_angle
from .targets import Assignment, Label, RegressionTarget

__all__ = [
    "LossConfig",
    "LossValue",
    "BatchLossValue",
    "smooth_l1",
    "regression_loss",
    "focal_loss",
    "focal_loss_from_logit",
    "batch_loss",
]


@dataclass(frozen=True)
class LossConfig:
    sigma: float = 3.0
    alpha: float = 0.25
    gamma: float = 2.0
    # wrap the heading residual into (-pi, pi] before the smooth L1; without
    # this a full-turn heading mismatch incurs a 2*pi-scale penalty
    wrap_heading: bool = True

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.gamma < 0.0:
            raise ValueError("gamma must be >= 0")


@dataclass(frozen=True)
class LossValue:
    """A loss value plus its gradient with respect to the predictions."""

    value: float
    gradient: float | np.ndarray


@dataclass(frozen=True)
class BatchLossValue:
    """Batch loss split into its two averaged terms, with per-unit gradients."""

    value: float
    cls_value: float
    reg_value: float
    score_grad: np.ndarray
    target_grad: np.ndarray


def _smooth_l1_scalar(d: float, sigma: float):
    bound = 1.0 / (sigma * sigma)
    if abs(d) < bound:
        return 0.5 * d * d * sigma * sigma, d * sigma * sigma
    return abs(d) - 0.5 * bound, math.copysign(1.0, d) if d != 0.0 else 0.0


def smooth_l1(d: float, sigma: float = 3.0) -> LossValue:
    """Quadratic-near-zero, linear-in-the-tails loss with branch at 1/sigma^2.

    value = 0.5 * d^2 * sigma^2 for |d| < 1/sigma^2, else |d| - 1/(2 sigma^2);
    the gradient is d * sigma^2 or sign(d) respectively.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    value, grad = _smooth_l1_scalar(float(d), float(sigma))
    return LossValue(value, grad)


def _smooth_l1_array(d: np.ndarray, sigma: float):
    bound = 1.0 / (sigma * sigma)
    quad = np.abs(d) < bound
    values = np.where(quad, 0.5 * d * d * sigma * sigma, np.abs(d) - 0.5 * bound)
    grads = np.where(quad, d * sigma * sigma, np.sign(d))
    return values, grads


def regression_loss(pred: RegressionTarget, ref, gt: Box7, cfg: LossConfig) -> LossValue:
    """Sum of the seven smooth L1 terms tying a prediction to one box.

    The residuals are ref - gt_center - delta for positions, log(gt_size) -
    delta for sizes, and heading_pred - heading_gt (wrapped by default).
    Zero exactly when pred equals the encoding of gt at ref. The gradient is
    over the seven prediction components in codec order.
    """
    rx, ry, rz = (float(v) for v in ref)
    residuals = np.array(
        [
            rx - gt.cx - pred.dx,
            ry - gt.cy - pred.dy,
            rz - gt.cz - pred.dz,
            math.log(gt.l) - pred.dl,
            math.log(gt.w) - pred.dw,
            math.log(gt.h) - pred.dh,
            0.0,
        ]
    )
    d_theta = pred.theta_p - gt.theta
    if cfg.wrap_heading:
        d_theta = wrap_angle(d_theta)
    residuals[6] = d_theta
    values, grads = _smooth_l1_array(residuals, cfg.sigma)
    gradient = np.empty(7)
    gradient[:6] = -grads[:6]  # residuals decrease in the prediction
    gradient[6] = grads[6]
    # order the gradient as (dx, dy, dz, dl, dw, dh, theta_p)
    return LossValue(float(np.sum(values)), gradient)


def focal_loss(p: float, is_positive: bool, cfg: LossConfig) -> LossValue:
    """Bilateral focal classification loss on a probability.

    Positives: -alpha * (1-p)^gamma * log(p), defined for 0 < p <= 1.
    Negatives: -(1-alpha) * p^gamma * log(1-p), defined for 0 <= p < 1.
    """
    p = float(p)
    a, g = cfg.alpha, cfg.gamma
    if is_positive:
        if not 0.0 < p <= 1.0:
            raise ValueError(f"positive focal loss needs p in (0, 1], got {p}")
        if p == 1.0:
            return LossValue(0.0, 0.0)
        q = 1.0 - p
        value = -a * q**g * math.log(p)
        grad = a * g * q ** (g - 1.0) * math.log(p) - a * q**g / p
        return LossValue(value, grad)
    if not 0.0 <= p < 1.0:
        raise ValueError(f"negative focal loss needs p in [0, 1), got {p}")
    if p == 0.0:
        return LossValue(0.0, 0.0)
    value = -(1.0 - a) * p**g * math.log(1.0 - p)
    grad = -(1.0 - a) * (g * p ** (g - 1.0) * math.log(1.0 - p) - p**g / (1.0 - p))
    return LossValue(value, grad)


def focal_loss_from_logit(z: float, is_positive: bool, cfg: LossConfig) -> LossValue:
    """The focal loss on p = sigmoid(z), evaluated stably in logit space.

    Equivalent to focal_loss at p = sigmoid(z); safe arbitrarily deep into
    the tails where p would round to exactly 0 or 1. The gradient is with
    respect to z.
    """
    z = float(z)
    a, g = cfg.alpha, cfg.gamma
    log_p = -float(np.logaddexp(0.0, -z))  # log sigmoid(z)
    log_q = -float(np.logaddexp(0.0, z))  # log sigmoid(-z) = log(1 - p)
    p = math.exp(log_p)
    q = math.exp(log_q)
    if is_positive:
        value = -a * q**g * log_p
        grad = -a * q**g * (q - g * p * log_p)
        return LossValue(value, grad)
    value = -(1.0 - a) * p**g * log_q
    grad = -(1.0 - a) * p**g * (g * q * log_q - p)
    return LossValue(value, grad)


def _focal_array(p: np.ndarray, positive: np.ndarray, cfg: LossConfig):
    """Vectorized focal loss; same formulas as the scalar entry point."""
    a, g = cfg.alpha, cfg.gamma
    values = np.zeros_like(p)
    grads = np.zeros_like(p)
    pos = positive & (p < 1.0)
    if pos.any():
        q = 1.0 - p[pos]
        lp = np.log(p[pos])
        values[pos] = -a * q**g * lp
        grads[pos] = a * g * q ** (g - 1.0) * lp - a * q**g / p[pos]
    neg = ~positive & (p > 0.0)
    if neg.any():
        lq = np.log(1.0 - p[neg])
        values[neg] = -(1.0 - a) * p[neg] ** g * lq
        grads[neg] = -(1.0 - a) * (g * p[neg] ** (g - 1.0) * lq - p[neg] ** g / (1.0 - p[neg]))
    return values, grads


def batch_loss(
    assignment: Assignment,
    scores: np.ndarray,
    pred_targets: np.ndarray,
    gt_boxes,
    cfg: LossConfig,
) -> BatchLossValue:
    """Classification plus regression loss over one assignment's units.

    The classification term averages the focal loss over non-ignored units;
    the regression term averages the seven-component smooth L1 over positive
    units (0 when there are none). Ignored units contribute to neither. The
    total is the unweighted sum of the two averages. Gradients come back per
    unit, already scaled by the averaging.
    """
    scores = np.asarray(scores, dtype=float).reshape(-1)
    preds = np.asarray(pred_targets, dtype=float)
    n = assignment.n_units
    if scores.shape != (n,) or preds.shape != (n, 7):
        raise ValueError(
            f"need scores ({n},) and targets ({n}, 7), got {scores.shape} and {preds.shape}"
        )
    positive = assignment.labels == Label.POSITIVE
    counted = assignment.labels != Label.IGNORE
    if np.any(positive & ((scores <= 0.0) | (scores > 1.0))):
        raise ValueError("positive units require scores in (0, 1]")
    if np.any(counted & ~positive & ((scores < 0.0) | (scores >= 1.0))):
        raise ValueError("negative units require scores in [0, 1)")
    score_grad = np.zeros(n)
    cls_value = 0.0
    n_cls = int(np.sum(counted))
    if n_cls:
        values, grads = _focal_array(scores[counted], positive[counted], cfg)
        cls_value = float(np.sum(values)) / n_cls
        score_grad[counted] = grads / n_cls

    target_grad = np.zeros((n, 7))
    reg_value = 0.0
    pos_idx = np.flatnonzero(positive)
    if pos_idx.size:
        gt_arr = np.stack([gt_boxes[g].as_array() for g in assignment.gt_index[pos_idx]])
        refs = assignment.refs[pos_idx]
        residuals = np.empty((pos_idx.size, 7))
        residuals[:, 0:3] = refs - gt_arr[:, 0:3] - preds[pos_idx, 0:3]
        residuals[:, 3:6] = np.log(gt_arr[:, 3:6]) - preds[pos_idx, 3:6]
        d_theta = preds[pos_idx, 6] - gt_arr[:, 6]
        residuals[:, 6] = wrap_angle(d_theta) if cfg.wrap_heading else d_theta
        values, grads = _smooth_l1_array(residuals, cfg.sigma)
        reg_value = float(np.sum(values)) / pos_idx.size
        target_grad[pos_idx, 0:6] = -grads[:, 0:6] / pos_idx.size
        target_grad[pos_idx, 6] = grads[:, 6] / pos_idx.size

    return BatchLossValue(cls_value + reg_value, cls_value, reg_value, score_grad, target_grad)
