"""Focal loss: cross-entropy reweighted by (1 - p_t)^gamma and per-class alpha.

With gamma = 0 and all alpha = 1 this is exactly plain cross-entropy.  The
target probability is clamped at 1e-12 before the log so a confidently wrong
prediction yields a large finite loss instead of an infinity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..dataset import N_CLASSES, LabelClass

P_CLAMP = 1e-12


def _default_alpha() -> np.ndarray:
    return np.ones(N_CLASSES)


@dataclass
class FocalLossConfig:
    gamma: float = 2.0
    alpha: np.ndarray = field(default_factory=_default_alpha)

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.alpha.shape != (N_CLASSES,):
            raise ValueError(f"alpha must have shape ({N_CLASSES},)")
        if np.any(self.alpha <= 0) or np.any(self.alpha > 1):
            raise ValueError("alpha components must lie in (0, 1]")


def inverse_frequency_alpha(labels: np.ndarray) -> np.ndarray:
    """Per-class weights proportional to inverse frequency, scaled to max 1.

    Classes absent from `labels` get weight 1.
    """
    counts = np.bincount(np.asarray(labels, dtype=int), minlength=N_CLASSES)
    counts = counts[:N_CLASSES].astype(float)
    alpha = np.ones(N_CLASSES)
    present = counts > 0
    if present.any():
        alpha[present] = counts[present].min() / counts[present]
    return alpha


def focal_loss_batch(
    probs: np.ndarray, targets: np.ndarray, cfg: FocalLossConfig
) -> np.ndarray:
    """Per-example focal loss for probs [B x 5] and integer targets [B]."""
    targets = np.asarray(targets, dtype=int)
    p_t = np.maximum(probs[np.arange(len(targets)), targets], P_CLAMP)
    return -cfg.alpha[targets] * (1.0 - p_t) ** cfg.gamma * np.log(p_t)


def focal_loss(
    probs: np.ndarray, target: LabelClass | int, cfg: FocalLossConfig
) -> float:
    return float(focal_loss_batch(np.asarray(probs, dtype=float)[None, :],
                                  np.array([int(target)]), cfg)[0])


def focal_grad_wrt_logits(
    probs: np.ndarray, targets: np.ndarray, cfg: FocalLossConfig
) -> np.ndarray:
    """Gradient of the MEAN focal loss with respect to the softmax logits.

    d loss / d p_t = alpha_t [gamma (1-p)^{gamma-1} ln p - (1-p)^gamma / p],
    then through the softmax Jacobian.  The clamp makes the loss flat below
    P_CLAMP, so the gradient there is zero.
    """
    b = probs.shape[0]
    targets = np.asarray(targets, dtype=int)
    rows = np.arange(b)
    p_raw = probs[rows, targets]
    p = np.maximum(p_raw, P_CLAMP)
    one_m = 1.0 - p
    dl_dp = np.zeros(b)
    active = (p_raw > P_CLAMP) & (one_m > 0)
    if active.any():
        pa = p[active]
        oa = one_m[active]
        term = -(oa ** cfg.gamma) / pa
        if cfg.gamma > 0:
            term = term + cfg.gamma * oa ** (cfg.gamma - 1.0) * np.log(pa)
        dl_dp[active] = cfg.alpha[targets[active]] * term
    onehot = np.zeros_like(probs)
    onehot[rows, targets] = 1.0
    d_logits = dl_dp[:, None] * p[:, None] * (onehot - probs)
    return d_logits / b
