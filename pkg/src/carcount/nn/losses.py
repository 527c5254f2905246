from __future__ import annotations

import logging

import numpy as np

log = logging.getLogger(__name__)

PROB_EPS = 1e-12


def cross_entropy(probs, labels):
    """Mean cross-entropy of softmax outputs.

    Returns ``(loss, dlogits, clamped)`` where ``dlogits = probs - one_hot``
    divided by the batch size, i.e. the gradient w.r.t. the pre-softmax
    logits, and ``clamped`` counts samples whose target probability hit the
    epsilon floor.
    """
    probs = np.asarray(probs)
    single = probs.ndim == 1
    if single:
        probs = probs[None]
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    n, k = probs.shape
    if labels.shape != (n,):
        raise ValueError("one label per sample required")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"label outside [0, {k})")
    p = probs[np.arange(n), labels]
    clamped = int((p <= PROB_EPS).sum())
    if clamped:
        log.warning("cross_entropy: %d target probabilities clamped to %g", clamped, PROB_EPS)
    loss = float(-np.log(np.maximum(p, PROB_EPS)).mean())
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    if single:
        grad = grad[0]
    return loss, grad, clamped
