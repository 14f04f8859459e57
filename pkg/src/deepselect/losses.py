"""Focal loss, binary cross entropy and selection metrics."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


@dataclass(frozen=True)
class LossConfig:
    gamma: float = 2.0
    prob_clamp_eps: float = 1e-7

    def __post_init__(self):
        if not self.gamma >= 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if not 0 < self.prob_clamp_eps < 0.5:
            raise ValueError(f"prob_clamp_eps must lie in (0, 0.5), got {self.prob_clamp_eps}")


def _check_mask(probs: Tensor, gt_mask: np.ndarray) -> np.ndarray:
    gt = np.asarray(gt_mask, dtype=np.float64)
    if gt.shape != probs.shape:
        raise ShapeError(f"probs {probs.shape} and gt_mask {gt.shape} differ")
    if gt.ndim < 2:
        raise ShapeError(f"expected [..., T, N] probabilities, got {probs.shape}")
    if not np.all((gt == 0) | (gt == 1)) or not np.all(gt.sum(axis=-1) == 1):
        raise ValueError("gt_mask must hold exactly one selected camera per frame")
    return gt


def focal_terms(probs, gt_mask, cfg: LossConfig = LossConfig()) -> Tensor:
    """Per-entry ``-(1 - q)^gamma * log q``; q is p for the selected camera, 1 - p otherwise."""
    p = probs if isinstance(probs, Tensor) else Tensor(probs)
    gt = _check_mask(p, gt_mask)
    eps = cfg.prob_clamp_eps
    p = T.clip(p, eps, 1.0 - eps)
    pos = Tensor(gt)
    one_minus_p = T.add(Tensor(np.ones(p.shape)), T.neg(p))
    q = T.add(T.mul(pos, p), T.mul(Tensor(1.0 - gt), one_minus_p))
    nll = T.neg(T.log(q))
    if cfg.gamma == 0:
        return nll
    weight = T.power(T.add(Tensor(np.ones(q.shape)), T.neg(q)), cfg.gamma)
    return T.mul(weight, nll)


def focal_loss(probs, gt_mask, cfg: LossConfig = LossConfig()) -> Tensor:
    """Mean focal loss over frames and cameras (and over a leading batch axis if present)."""
    return T.mean_over_axis(focal_terms(probs, gt_mask, cfg))


def binary_cross_entropy(probs, gt_mask, cfg: LossConfig = LossConfig()) -> Tensor:
    """``-mean(y log p + (1 - y) log(1 - p))`` with the same clamping as the focal loss."""
    p = probs if isinstance(probs, Tensor) else Tensor(probs)
    gt = _check_mask(p, gt_mask)
    eps = cfg.prob_clamp_eps
    p = T.clip(p, eps, 1.0 - eps)
    log_p = T.log(p)
    log_not_p = T.log(T.add(Tensor(np.ones(p.shape)), T.neg(p)))
    ll = T.add(T.mul(Tensor(gt), log_p), T.mul(Tensor(1.0 - gt), log_not_p))
    return T.neg(T.mean_over_axis(ll))


def label_imbalance(num_cameras: int) -> Fraction:
    """Selected : not-selected entry ratio under one-hot labels, i.e. 1 : (N - 1)."""
    if num_cameras < 2:
        raise ValueError(f"need at least two cameras, got {num_cameras}")
    return Fraction(1, num_cameras - 1)


def one_hot(labels, num_cameras: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if np.any(labels < 0) or np.any(labels >= num_cameras):
        raise ValueError(f"labels must lie in [0, {num_cameras})")
    out = np.zeros(labels.shape + (num_cameras,))
    np.put_along_axis(out, labels[..., None], 1.0, axis=-1)
    return out


def dice_score(pred_labels, gt_labels, num_cameras: int) -> float:
    """Dice overlap of the one-hot selection masks.

    With exactly one camera per frame in both masks this equals the fraction of
    matching frames.
    """
    pred = np.asarray(pred_labels)
    gt = np.asarray(gt_labels)
    if pred.shape != gt.shape or pred.ndim != 1:
        raise ShapeError(f"label sequences differ in shape: {pred.shape} vs {gt.shape}")
    a = one_hot(pred, num_cameras)
    b = one_hot(gt, num_cameras)
    total = a.sum() + b.sum()
    if total == 0:
        return 1.0
    return float(2.0 * (a * b).sum() / total)


def switch_count(labels) -> int:
    labels = np.asarray(labels)
    return int(np.count_nonzero(labels[1:] != labels[:-1]))
