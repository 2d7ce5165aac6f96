"""Training losses returning a value and gradients.

``cp_loss`` decomposes prediction and target with the same filter kernels and
sums the per-component MAE over all ``K + 1`` components.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._validation import check_same_shape, check_series
from .filter import decompose, decompose_backward


@dataclass
class LossOutput:
    value: float
    grad_pred: np.ndarray
    grad_filter: Optional[np.ndarray] = None


def _pair(pred, target):
    pred = check_series(pred, "pred")
    target = check_series(target, "target")
    check_same_shape(pred, target, ("pred", "target"))
    return pred, target


def mse_loss(pred, target):
    pred, target = _pair(pred, target)
    diff = pred - target
    return LossOutput(float(np.mean(diff ** 2)), 2.0 * diff / diff.size)


def mae_loss(pred, target):
    pred, target = _pair(pred, target)
    diff = pred - target
    return LossOutput(float(np.mean(np.abs(diff))), np.sign(diff) / diff.size)


def cp_loss(pred, target, params, K, detach_target=False):
    """Channel-wise perceptual loss.

    With ``detach_target`` the kernel gradient only flows through the
    prediction branch.
    """
    pred, target = _pair(pred, target)
    if detach_target:
        p_hat = decompose(pred, params, K)
        diffs = [a - b for a, b in zip(p_hat.components, decompose(target, params, K).components)]
    else:
        # the pyramid is linear in the signal for fixed kernels, so one pass over
        # the residual yields both branches' components and kernel gradients
        p_hat = decompose(pred - target, params, K)
        diffs = p_hat.components

    value = 0.0
    grads = []
    for diff in diffs:
        value += float(np.mean(np.abs(diff)))
        grads.append(np.sign(diff) / diff.size)

    grad_pred, grad_w = decompose_backward(grads[:-1], grads[-1], p_hat, params)
    return LossOutput(value, grad_pred, grad_w)


LOSSES = ("mse", "mae", "cp")
