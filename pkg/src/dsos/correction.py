"""Label transformations and the training objective used after detection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError
from .nn import cross_entropy_soft, row_entropy, softmax


@dataclass
class CorrectionParams:
    alpha: float = 0.05
    gamma: float = 0.4
    bootstrap_threshold: float = 0.9
    mixup_beta: float = 1.0

    def validate(self) -> None:
        if not self.alpha > 0:
            raise ConfigError("alpha must be positive")
        if not self.gamma >= 0:
            raise ConfigError("gamma must be nonnegative")
        if not 0 < self.bootstrap_threshold <= 1:
            raise ConfigError("bootstrap_threshold must lie in (0, 1]")
        if not self.mixup_beta > 0:
            raise ConfigError("mixup_beta must be positive")


def bootstrap_label(given, predicted, u, threshold: float = 0.9) -> np.ndarray:
    """Swap in the prediction where ``u > threshold``; works on one label or a batch."""
    g = np.asarray(given, dtype=np.float64)
    p = np.asarray(predicted, dtype=np.float64)
    if g.shape != p.shape:
        raise InputError(f"given {g.shape} and predicted {p.shape} differ in shape")
    swap = np.asarray(u) > threshold
    if g.ndim == 2:
        swap = swap[:, None]
    return np.where(swap, p, g)


def dynamic_soften(label, v, alpha: float = 0.05) -> np.ndarray:
    """``softmax(v * label / alpha)`` per row: v=0 gives a uniform target."""
    y = np.asarray(label, dtype=np.float64)
    vv = np.asarray(v, dtype=np.float64)
    if y.ndim == 2:
        vv = vv.reshape(-1, 1)
    return softmax(vv * y / alpha)


def mixup_batch(features, labels, lam: float, permutation) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    perm = np.asarray(permutation)
    if sorted(perm.tolist()) != list(range(x.shape[0])):
        raise InputError("permutation must be a bijection on batch indices")
    return lam * x + (1 - lam) * x[perm], lam * y + (1 - lam) * y[perm]


def entropy_penalty(probs, v_weights) -> float:
    """Batch mean of ``v_i * H(p_i)``; adding it to the loss rewards confident outputs."""
    p = np.asarray(probs, dtype=np.float64)
    v = np.asarray(v_weights, dtype=np.float64)
    if p.ndim != 2 or v.shape != (p.shape[0],):
        raise InputError(f"need one weight per row: probs {p.shape}, weights {v.shape}")
    return float(np.mean(v * row_entropy(p)))


def total_loss(probs, targets_yd, v_weights, params: CorrectionParams) -> float:
    return cross_entropy_soft(probs, targets_yd) + params.gamma * entropy_penalty(probs, v_weights)
