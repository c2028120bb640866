"""Cross-entropy losses for the two heads, with gradients wrt the logits."""
from __future__ import annotations

from typing import Tuple

import numpy as np
from scipy.special import expit, log_softmax, softmax

from .tokenizer import IGNORE_INDEX


def mlm_loss(logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean token cross-entropy over positions whose label is not the sentinel.

    A batch without selected tokens has loss 0 and a zero gradient.
    """

    selected = labels != IGNORE_INDEX
    n_selected = int(selected.sum())
    grad = np.zeros_like(logits)
    if n_selected == 0:
        return 0.0, grad
    picked = logits[selected].astype(np.float64)
    targets = labels[selected]
    rows = np.arange(n_selected)
    log_probs = log_softmax(picked, axis=-1)
    loss = float(-log_probs[rows, targets].sum() / n_selected)
    probs = softmax(picked, axis=-1)
    probs[rows, targets] -= 1.0
    grad[selected] = (probs / n_selected).astype(logits.dtype)
    return loss, grad


def cls_loss(logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean binary cross-entropy of sigmoid(logits) against 0/1 labels."""

    z = logits.astype(np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if z.shape != y.shape:
        raise ValueError(f"logits {z.shape} and labels {y.shape} differ in shape")
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
    grad = ((expit(z) - y) / z.size).astype(logits.dtype)
    return loss, grad


def bce_from_scores(scores: np.ndarray, labels: np.ndarray, eps: float = 1e-15) -> float:
    """Binary cross-entropy computed from probabilities rather than logits."""

    s = np.clip(np.asarray(scores, dtype=np.float64), eps, 1.0 - eps)
    y = np.asarray(labels, dtype=np.float64)
    return float(-np.mean(y * np.log(s) + (1.0 - y) * np.log1p(-s)))
