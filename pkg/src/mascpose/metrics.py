"""Pose evaluation metrics: MPJPE family, Procrustes alignment, PCK and AUC.

All metrics are in millimetres and operate on [T, J, 3] (or [J, 3]) arrays.
P-MPJPE aligns each frame to the ground truth with the optimal similarity
transform (rotation + uniform scale + translation) before measuring error.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, ShapeError

DEFAULT_AUC_THRESHOLDS_MM = np.arange(5.0, 151.0, 5.0)  # 5..150 mm, 30 levels
PCK_THRESHOLD_MM = 150.0


def _check_pair(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction shape {pred.shape} != ground truth shape {gt.shape}")
    return pred, gt


def joint_errors(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Per-joint Euclidean distances, shape pred.shape[:-1]."""
    pred, gt = _check_pair(pred, gt)
    return np.linalg.norm(pred - gt, axis=-1)


def mpjpe(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean per-joint position error over all frames and joints (mm)."""
    return float(joint_errors(pred, gt).mean())


def n_mpjpe(pred: np.ndarray, gt: np.ndarray) -> float:
    """MPJPE after the least-squares optimal global rescaling of pred.

    The scale is fit once for the whole sequence. An all-zero prediction has
    no defined scale; plain MPJPE is returned with a warning.
    """
    pred, gt = _check_pair(pred, gt)
    denom = float((pred * pred).sum())
    if denom == 0.0:
        warnings.warn("n_mpjpe: all-zero prediction, scale undefined; returning plain MPJPE")
        return mpjpe(pred, gt)
    s = float((pred * gt).sum()) / denom
    return mpjpe(s * pred, gt)


def velocity_error(pred: np.ndarray, gt: np.ndarray) -> float:
    """MPJPE of first-order temporal differences."""
    pred, gt = _check_pair(pred, gt)
    if pred.shape[0] < 2:
        warnings.warn("velocity_error: fewer than 2 frames, returning 0")
        return 0.0
    return mpjpe(np.diff(pred, axis=0), np.diff(gt, axis=0))


def accel_error(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean norm of the second-order temporal difference mismatch."""
    pred, gt = _check_pair(pred, gt)
    if pred.shape[0] < 3:
        warnings.warn("accel_error: fewer than 3 frames, returning 0")
        return 0.0
    return mpjpe(np.diff(pred, n=2, axis=0), np.diff(gt, n=2, axis=0))


def procrustes_align(pred_frame: np.ndarray, gt_frame: np.ndarray) -> np.ndarray:
    """Align one [J, 3] frame to the ground truth with the optimal similarity.

    Classic orthogonal Procrustes: rotation from the SVD of the centered
    cross-covariance (reflections corrected), then least-squares scale and
    translation. A rank-deficient cross-covariance (collinear points) falls
    back to translation + scale only, with a warning.
    """
    pred, gt = _check_pair(pred_frame, gt_frame)
    if pred.ndim != 2 or pred.shape[1] != 3:
        raise ShapeError(f"procrustes_align expects [J, 3] frames, got {pred.shape}")
    if pred.shape[0] < 3:
        raise ParameterError("procrustes_align needs at least 3 joints")
    mu_p = pred.mean(axis=0)
    mu_g = gt.mean(axis=0)
    p = pred - mu_p
    g = gt - mu_g
    var_p = float((p * p).sum())
    if var_p == 0.0:
        warnings.warn("procrustes_align: degenerate (constant) prediction; translation only")
        return np.broadcast_to(mu_g, pred.shape).copy()
    k = p.T @ g
    if np.linalg.matrix_rank(k) < 2:
        warnings.warn("procrustes_align: rank-deficient cross-covariance; scale+translation only")
        s = float((p * g).sum()) / var_p
        return s * p + mu_g
    u, sv, vt = np.linalg.svd(k)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    signs = np.array([1.0, 1.0, d])
    rot = vt.T @ np.diag(signs) @ u.T
    s = float((signs * sv).sum()) / var_p
    return s * p @ rot.T + mu_g


def p_mpjpe(pred: np.ndarray, gt: np.ndarray) -> float:
    """MPJPE after per-frame Procrustes alignment."""
    pred, gt = _check_pair(pred, gt)
    frames_p = pred if pred.ndim == 3 else pred[None]
    frames_g = gt if gt.ndim == 3 else gt[None]
    errs = [mpjpe(procrustes_align(fp, fg), fg) for fp, fg in zip(frames_p, frames_g)]
    return float(np.mean(errs))


def pck_auc(pred: np.ndarray, gt: np.ndarray, thresholds=None) -> tuple[float, float]:
    """PCK at 150 mm and AUC over the threshold grid, both in percent.

    A joint counts as correct when its error is strictly below the
    threshold. AUC is the mean PCK over the (default 5..150 mm) grid.
    """
    if thresholds is None:
        thresholds = DEFAULT_AUC_THRESHOLDS_MM
    thresholds = np.asarray(thresholds, dtype=np.float64)
    if thresholds.size == 0:
        raise ParameterError("pck_auc: thresholds must be non-empty")
    if np.any(np.diff(thresholds) <= 0):
        raise ParameterError("pck_auc: thresholds must be strictly ascending")
    errs = joint_errors(pred, gt).reshape(-1)
    pck = float((errs < PCK_THRESHOLD_MM).mean() * 100.0)
    auc = float((errs[None, :] < thresholds[:, None]).mean() * 100.0)
    return pck, auc


@dataclass
class MetricReport:
    """Aggregate evaluation numbers plus the per-joint MPJPE breakdown."""

    mpjpe_mm: float
    p_mpjpe_mm: float
    n_mpjpe_mm: float
    pck_pct: float
    auc_pct: float
    per_joint_mpjpe: list[float] = field(default_factory=list)

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(
            {
                "mpjpe_mm": self.mpjpe_mm,
                "p_mpjpe_mm": self.p_mpjpe_mm,
                "n_mpjpe_mm": self.n_mpjpe_mm,
                "pck_pct": self.pck_pct,
                "auc_pct": self.auc_pct,
                "per_joint_mpjpe": self.per_joint_mpjpe,
            },
            indent=indent,
        )

    @staticmethod
    def from_pairs(pairs) -> "MetricReport":
        """Build a report from an iterable of (pred, gt) sequence pairs."""
        preds, gts = [], []
        for pred, gt in pairs:
            pred, gt = _check_pair(pred, gt)
            preds.append(pred.reshape(-1, pred.shape[-2], 3))
            gts.append(gt.reshape(-1, gt.shape[-2], 3))
        pred_all = np.concatenate(preds, axis=0)
        gt_all = np.concatenate(gts, axis=0)
        pck, auc = pck_auc(pred_all, gt_all)
        return MetricReport(
            mpjpe_mm=mpjpe(pred_all, gt_all),
            p_mpjpe_mm=p_mpjpe(pred_all, gt_all),
            n_mpjpe_mm=float(np.mean([n_mpjpe(p, g) for p, g in zip(preds, gts)])),
            pck_pct=pck,
            auc_pct=auc,
            per_joint_mpjpe=list(joint_errors(pred_all, gt_all).mean(axis=0)),
        )
