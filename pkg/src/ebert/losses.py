"""Paired MLM loss and binary binding loss, with gradients w.r.t. logits."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import sigmoid
from .masking import IGNORE


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")


def cross_entropy(logits: np.ndarray, labels: np.ndarray, want_grad: bool = False, grad_scale: float = 1.0):
    """Mean softmax cross-entropy over rows whose label is not IGNORE.

    Returns ``(loss, n_targets, dlogits)``; ``dlogits`` (multiplied by
    ``grad_scale``) is None unless requested.  Zero targets give loss 0.
    """
    V = logits.shape[-1]
    flat = logits.reshape(-1, V)
    y = np.asarray(labels).reshape(-1)
    sel = np.flatnonzero(y != IGNORE)
    n = sel.size
    if n == 0:
        return 0.0, 0, (np.zeros_like(logits) if want_grad else None)
    # float32 logits stay float32 for the softmax; the mean is taken in float64
    z = flat[sel].astype(np.result_type(flat.dtype, np.float32))
    z -= z.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e.sum(axis=1)
    rows = np.arange(n)
    yy = y[sel]
    loss = float(np.mean(np.log(s).astype(np.float64) - z[rows, yy]))
    grad = None
    if want_grad:
        e /= s[:, None]
        e[rows, yy] -= 1.0
        e *= grad_scale / n
        if n == flat.shape[0]:
            grad = e.astype(flat.dtype, copy=False).reshape(logits.shape)
        else:
            grad = np.zeros_like(flat)
            grad[sel] = e
            grad = grad.reshape(logits.shape)
    return loss, n, grad


def paired_loss(dna_logits, dna_labels, ideas_logits, ideas_labels, cfg: LossConfig = LossConfig(), want_grad: bool = False):
    """Weighted DNA + IDEAS cross-entropy: ``alpha*dna + (1-alpha)*ideas``.

    Returns ``(total, dna, ideas)``, plus a dict of logit gradients when
    ``want_grad`` is set.
    """
    a = cfg.alpha
    dna, n_dna, g_dna = cross_entropy(dna_logits, dna_labels, want_grad, a)
    if n_dna == 0:
        raise ValueError("no DNA targets: every DNA label is IGNORE")
    ideas, g_ideas = 0.0, None
    if ideas_logits is not None and ideas_labels is not None:
        ideas, _, g_ideas = cross_entropy(ideas_logits, ideas_labels, want_grad, 1 - a)
    total = dna * a + ideas * (1 - a)
    if not want_grad:
        return total, dna, ideas
    grads = {"dna_logits": g_dna}
    if g_ideas is not None:
        grads["ideas_logits"] = g_ideas
    return (total, dna, ideas), grads


def binding_loss(prob, label) -> float:
    """Binary cross-entropy -[y ln p + (1-y) ln(1-p)], averaged over a batch."""
    p = np.asarray(prob, dtype=np.float64)
    y = np.asarray(label, dtype=np.float64)
    return float(np.mean(-(y * np.log(p) + (1 - y) * np.log1p(-p))))


def binding_loss_from_logit(logit, label, want_grad: bool = False):
    """Numerically stable BCE on logits; gradient is (sigmoid(z) - y) / B."""
    z = np.asarray(logit, dtype=np.float64)
    y = np.asarray(label, dtype=np.float64)
    loss = float(np.mean(np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))))
    if not want_grad:
        return loss
    p = sigmoid(z)
    return loss, ((p - y) / z.size).astype(np.asarray(logit).dtype)
