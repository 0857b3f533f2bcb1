"""Training heads: softmax cross-entropy and the cosine triplet ranking loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Triplet:
    """Dataset indices of an (anchor, positive, negative) sample triple."""
    anchor: int
    positive: int
    negative: int


def cosine_distance(u: np.ndarray, v: np.ndarray) -> float:
    """1 - cos(u, v), in [0, 2]. Zero-norm inputs are degenerate embeddings."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine distance undefined for zero-norm vectors")
    return float(1.0 - (u @ v) / (nu * nv))


def triplet_loss(delta_plus: float, delta_minus: float, margin: float) -> float:
    """Hinge on the distance gap: max(0, margin + delta_plus - delta_minus).

    Zero exactly when the negative is farther than the positive by at least the
    margin.
    """
    return max(0.0, margin + delta_plus - delta_minus)


def _cosine_distance_grad(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """d/du of (1 - u.v / (|u||v|))."""
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    return -(v / (nu * nv) - (u @ v) * u / (nu ** 3 * nv))


def triplet_loss_backward(f_a: np.ndarray, f_p: np.ndarray, f_n: np.ndarray,
                          margin: float
                          ) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Loss and gradients w.r.t. the three embeddings.

    In the flat region of the hinge all gradients are zero.
    """
    f_a = np.asarray(f_a, dtype=np.float64)
    f_p = np.asarray(f_p, dtype=np.float64)
    f_n = np.asarray(f_n, dtype=np.float64)
    d_plus = cosine_distance(f_a, f_p)
    d_minus = cosine_distance(f_a, f_n)
    loss = triplet_loss(d_plus, d_minus, margin)
    if loss <= 0.0:
        z = np.zeros_like(f_a)
        return loss, z, z.copy(), z.copy()
    g_a = _cosine_distance_grad(f_a, f_p) - _cosine_distance_grad(f_a, f_n)
    g_p = _cosine_distance_grad(f_p, f_a)
    g_n = -_cosine_distance_grad(f_n, f_a)
    return loss, g_a, g_p, g_n


def softmax_nll(logits: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    """Negative log softmax likelihood and its gradient w.r.t. the logits.

    The log-sum-exp uses max subtraction, so large logits stay finite.
    """
    logits = np.asarray(logits, dtype=np.float64)
    n = logits.shape[0]
    if not 0 <= label < n:
        raise ValueError(f"label {label} out of range for {n} classes")
    m = logits.max()
    exp = np.exp(logits - m)
    z = exp.sum()
    log_z = m + np.log(z)
    loss = log_z - logits[label]
    grad = exp / z
    grad[label] -= 1.0
    return float(loss), grad


def softmax_nll_batch(logits: np.ndarray, labels: np.ndarray
                      ) -> tuple[float, np.ndarray]:
    """Mean loss over rows and the matching per-row gradient matrix."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    k, n = logits.shape
    if labels.shape[0] != k:
        raise ValueError("one label per logits row required")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= n:
        raise ValueError("label out of range")
    m = logits.max(axis=1, keepdims=True)
    exp = np.exp(logits - m)
    z = exp.sum(axis=1, keepdims=True)
    log_z = (m + np.log(z)).ravel()
    losses = log_z - logits[np.arange(k), labels]
    grad = exp / z
    grad[np.arange(k), labels] -= 1.0
    return float(losses.mean()), grad / k
