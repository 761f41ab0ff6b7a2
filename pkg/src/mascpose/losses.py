"""Differentiable training objective: position, scale, velocity and
acceleration-consistency terms combined with fixed weights.

Losses mirror the evaluation metrics but are built from autodiff primitives
so gradients flow to the prediction. Ground truth enters as a constant.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .tensor import Tensor, mean, mul, scale, sqrt, sub, tsum

DEFAULT_SCALE_WEIGHT = 0.5
DEFAULT_VELOCITY_WEIGHT = 20.0
DEFAULT_DRIFT_WEIGHT = 0.5


@dataclass(frozen=True)
class LossWeights:
    scale_w: float = DEFAULT_SCALE_WEIGHT
    velocity_w: float = DEFAULT_VELOCITY_WEIGHT
    drift_w: float = DEFAULT_DRIFT_WEIGHT

    def __post_init__(self):
        for name in ("scale_w", "velocity_w", "drift_w"):
            if getattr(self, name) < 0:
                raise ParameterError(f"loss weight {name} must be >= 0")


def _as_const(gt) -> Tensor:
    return gt if isinstance(gt, Tensor) else Tensor(np.asarray(gt, dtype=np.float64))


def _mean_norm(diff: Tensor) -> Tensor:
    """Mean over leading axes of the Euclidean norm along the last axis."""
    return mean(sqrt(tsum(mul(diff, diff), axis=-1)))


def mpjpe_loss(pred: Tensor, gt) -> Tensor:
    return _mean_norm(sub(pred, _as_const(gt)))


def n_mpjpe_loss(pred: Tensor, gt) -> Tensor:
    """MPJPE after the differentiable least-squares global rescale of pred."""
    gt = _as_const(gt)
    denom = tsum(mul(pred, pred))
    if float(denom.data) == 0.0:
        warnings.warn("n_mpjpe_loss: all-zero prediction, scale undefined; using plain MPJPE")
        return mpjpe_loss(pred, gt)
    s = tsum(mul(pred, gt)) / denom
    return _mean_norm(sub(mul(pred, s), gt))


def velocity_loss(pred: Tensor, gt) -> Tensor:
    gt = _as_const(gt)
    if pred.shape[0] < 2:
        warnings.warn("velocity_loss: fewer than 2 frames, returning 0")
        return scale(tsum(mul(pred, Tensor(np.zeros(pred.shape)))), 0.0)
    dp = sub(pred[1:], pred[:-1])
    dg = Tensor(np.diff(gt.data, axis=0))
    return _mean_norm(sub(dp, dg))


def accel_loss(pred: Tensor, gt) -> Tensor:
    """Second-order temporal difference consistency (drift term)."""
    gt = _as_const(gt)
    if pred.shape[0] < 3:
        warnings.warn("accel_loss: fewer than 3 frames, returning 0")
        return scale(tsum(mul(pred, Tensor(np.zeros(pred.shape)))), 0.0)
    dp = sub(pred[2:], scale(pred[1:-1], 2.0)) + pred[:-2]
    dg = Tensor(np.diff(gt.data, n=2, axis=0))
    return _mean_norm(sub(dp, dg))


@dataclass
class LossBreakdown:
    position: float
    scale: float
    velocity: float
    drift: float
    total: float


def total_loss(pred: Tensor, gt, weights: LossWeights | None = None) -> tuple[Tensor, LossBreakdown]:
    """Weighted sum of the four loss terms; returns the scalar and its parts."""
    w = weights or LossWeights()
    gt = _as_const(gt)
    lm = mpjpe_loss(pred, gt)
    ls = n_mpjpe_loss(pred, gt)
    lv = velocity_loss(pred, gt)
    ld = accel_loss(pred, gt)
    total = lm + scale(ls, w.scale_w) + scale(lv, w.velocity_w) + scale(ld, w.drift_w)
    parts = LossBreakdown(
        position=float(lm.data),
        scale=float(ls.data),
        velocity=float(lv.data),
        drift=float(ld.data),
        total=float(total.data),
    )
    return total, parts
