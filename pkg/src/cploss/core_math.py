"""Linear primitives on channel series and their exact adjoints.

Every function takes arrays shaped ``(..., C, T)``: the last two axes are
channels and time, any leading axes are treated as a batch. Kernels are
shaped ``(C, k)`` and shared across the batch, so kernel gradients are summed
over leading axes.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._validation import (
    DegenerateInputError,
    ShapeError,
    check_kernels,
    check_same_shape,
    check_series,
)

__all__ = [
    "as_series",
    "conv1d_same",
    "conv1d_same_adjoint",
    "downsample2",
    "downsample2_adjoint",
    "upsample2",
    "upsample2_adjoint",
    "downsampled_length",
    "mae",
    "mae_grad",
]


def as_series(x):
    """Return ``x`` as a validated float64 channel series ``(..., C, T)``."""
    return check_series(x)


def _edge_pad(x, half):
    if half == 0:
        return x
    left = np.repeat(x[..., :1], half, axis=-1)
    right = np.repeat(x[..., -1:], half, axis=-1)
    return np.concatenate([left, x, right], axis=-1)


def _taps(xp, k):
    # (..., C, T + k - 1) -> (..., C, T, k) view
    return sliding_window_view(xp, k, axis=-1)


def conv1d_same(x, kernels):
    """Per-channel correlation with replicate padding; output keeps length T.

    ``y[c, t] = sum_i kernels[c, i] * x[c, clip(t + i - k // 2, 0, T - 1)]``
    """
    x = check_series(x)
    w = check_kernels(kernels, x.shape[-2])
    k = w.shape[1]
    T = x.shape[-1]
    xp = _edge_pad(x, k // 2)
    return np.einsum("...ctk,ck->...ct", _taps(xp, k), w)


def conv1d_same_adjoint(grad_out, x, kernels):
    """Gradients of :func:`conv1d_same` w.r.t. its input and kernels.

    Returns ``(grad_x, grad_kernels)``. Contributions that land on padded
    positions are folded back onto the edge samples they replicate.
    """
    g = check_series(grad_out, "grad_out")
    x = check_series(x)
    check_same_shape(g, x, ("grad_out", "x"))
    w = check_kernels(kernels, x.shape[-2])
    k = w.shape[1]
    half = k // 2
    T = x.shape[-1]
    xp = _edge_pad(x, half)
    C = x.shape[-2]
    taps = _taps(xp.reshape(-1, C, T + k - 1), k)
    grad_w = np.einsum("bct,bctk->ck", g.reshape(-1, C, T), taps)
    # full convolution of g with the kernel, laid out over the padded axis
    gz = np.zeros(g.shape[:-1] + (T + 2 * (k - 1),))
    gz[..., k - 1:k - 1 + T] = g
    grad_xp = np.einsum("...ctk,ck->...ct", _taps(gz, k), w[:, ::-1])

    grad_x = grad_xp[..., half:half + T].copy()
    if half:
        grad_x[..., 0] += grad_xp[..., :half].sum(axis=-1)
        grad_x[..., -1] += grad_xp[..., half + T:].sum(axis=-1)
    return grad_x, grad_w


def downsampled_length(T):
    return (T + 1) // 2


def downsample2(x):
    """Average adjacent pairs; an odd trailing sample is paired with itself."""
    x = check_series(x)
    T = x.shape[-1]
    if T < 2:
        raise DegenerateInputError(f"downsample2 needs T >= 2, got T={T}")
    if T % 2:
        x = np.concatenate([x, x[..., -1:]], axis=-1)
    return 0.5 * (x[..., 0::2] + x[..., 1::2])


def downsample2_adjoint(grad_out, input_length):
    """Adjoint of :func:`downsample2` for an input of length ``input_length``."""
    g = check_series(grad_out, "grad_out")
    if g.shape[-1] != downsampled_length(input_length) or input_length < 2:
        raise ShapeError(
            f"grad_out length {g.shape[-1]} does not match input length {input_length}"
        )
    grad = np.repeat(0.5 * g, 2, axis=-1)
    if input_length % 2:
        # self-paired tail receives both halves
        grad[..., -2] += grad[..., -1]
        grad = grad[..., :-1]
    return grad


def _check_upsample_target(T_in, target_len):
    if target_len not in (2 * T_in - 1, 2 * T_in):
        raise ShapeError(
            f"target_len must be {2 * T_in - 1} or {2 * T_in} for input length "
            f"{T_in}, got {target_len}"
        )


def upsample2(x, target_len):
    """Zero-order hold: repeat each sample twice, truncate to ``target_len``."""
    x = check_series(x)
    _check_upsample_target(x.shape[-1], target_len)
    return np.repeat(x, 2, axis=-1)[..., :target_len]


def upsample2_adjoint(grad_out, input_length):
    """Adjoint of :func:`upsample2`: sum gradients of each repeated pair."""
    g = check_series(grad_out, "grad_out")
    _check_upsample_target(input_length, g.shape[-1])
    if g.shape[-1] % 2:
        pad = [(0, 0)] * (g.ndim - 1) + [(0, 1)]
        g = np.pad(g, pad)
    return g.reshape(g.shape[:-1] + (input_length, 2)).sum(axis=-1)


def mae(a, b):
    a = check_series(a, "a")
    b = check_series(b, "b")
    check_same_shape(a, b)
    return float(np.mean(np.abs(a - b)))


def mae_grad(a, b):
    """Subgradient of :func:`mae` w.r.t. ``a``, using ``sign(0) = 0``."""
    a = check_series(a, "a")
    b = check_series(b, "b")
    check_same_shape(a, b)
    return np.sign(a - b) / a.size
