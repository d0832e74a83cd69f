"""Training objectives: softmax cross-entropy, Euclidean loss, and their sum."""

import numpy as np

from .errors import ContractError
from .tensor import as_tensor

LOG_CLAMP = 1e-12


def cross_entropy_loss(probs, targets):
    """Mean negative log-likelihood over a (B, C) batch.

    Returns ``(loss, grad_logits)`` where ``grad_logits`` is the gradient of
    the loss with respect to the logits that produced ``probs`` through a
    softmax, i.e. ``(probs - targets) / B``.
    """
    probs = np.atleast_2d(as_tensor(probs))
    targets = np.atleast_2d(as_tensor(targets))
    if probs.shape != targets.shape:
        raise ContractError(f"probs shape {probs.shape} != targets shape {targets.shape}")
    one_hot = np.all((targets == 0) | (targets == 1), axis=1) & (targets.sum(axis=1) == 1)
    if not one_hot.all():
        row = int(np.argmin(one_hot))
        raise ContractError(f"target row {row} is not one-hot: {targets[row].tolist()}")
    B = probs.shape[0]
    picked = np.maximum(probs[targets == 1], LOG_CLAMP)
    loss = -np.log(picked).sum() / B
    return float(loss), (probs - targets) / B


def euclidean_loss(outputs, targets):
    """``sum_i ||o_i - s_i||^2 / (2B)`` and its gradient ``(o - s) / B``."""
    outputs = np.atleast_2d(as_tensor(outputs))
    targets = np.atleast_2d(as_tensor(targets))
    if outputs.shape != targets.shape:
        raise ContractError(f"outputs shape {outputs.shape} != targets shape {targets.shape}")
    B = outputs.shape[0]
    diff = outputs - targets
    return float(np.sum(diff * diff) / (2 * B)), diff / B


def total_loss(l_ce, l_euclid, lam):
    if l_ce < 0 or l_euclid < 0:
        raise ContractError("loss terms must be non-negative")
    return l_ce + lam * l_euclid
