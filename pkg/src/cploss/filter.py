"""Learnable channel-wise pyramid filter.

One kernel per channel is reused at every level. At level ``j`` the current
approximation is halved in rate, convolved with the channel kernel, and the
zero-order-hold up-sampled result is subtracted from the approximation to give
the detail component::

    D_j   = downsample2(Y_{j-1})
    Y_j   = conv1d_same(D_j, kernels)
    tau_j = Y_{j-1} - upsample2(Y_j, len(Y_{j-1}))

After ``K`` levels the coarse approximation ``Y_K`` is the last component.
Because details are defined by exact subtraction the decomposition is
invertible for any kernel values.
"""

import math
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import comb
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import (
    ConfigError,
    DataError,
    DegenerateInputError,
    ShapeError,
    UsageError,
    check_kernels,
    check_series,
)
from .core_math import (
    conv1d_same,
    conv1d_same_adjoint,
    downsample2,
    downsample2_adjoint,
    upsample2,
    upsample2_adjoint,
)

DEFAULT_KERNEL_SIZE = 5
DEFAULT_SCALES = 5
INIT_JITTER = 1e-3

_FILTER_MAGIC = b"CPF1"
_FILTER_HEADER = struct.Struct("<4sII4x")


@dataclass
class FilterParams:
    """Per-channel kernels ``(C, k)`` plus an optional gradient accumulator."""

    kernels: np.ndarray
    grad: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.kernels = check_kernels(self.kernels).copy()
        if self.grad is None:
            self.grad = np.zeros_like(self.kernels)

    @property
    def n_channels(self):
        return self.kernels.shape[0]

    @property
    def kernel_size(self):
        return self.kernels.shape[1]

    @property
    def n_params(self):
        return self.kernels.size

    def zero_grad(self):
        self.grad[...] = 0.0

    def copy(self):
        return FilterParams(self.kernels.copy(), self.grad.copy())

    def to_bytes(self):
        header = _FILTER_HEADER.pack(_FILTER_MAGIC, self.n_channels, self.kernel_size)
        return header + self.kernels.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, buf):
        if len(buf) < _FILTER_HEADER.size:
            raise DataError("filter checkpoint truncated")
        magic, C, k = _FILTER_HEADER.unpack_from(buf)
        if magic != _FILTER_MAGIC:
            raise DataError(f"bad filter checkpoint magic {magic!r}")
        body = np.frombuffer(buf, dtype="<f8", offset=_FILTER_HEADER.size)
        if body.size != C * k:
            raise DataError(f"filter checkpoint has {body.size} values, expected {C * k}")
        return cls(body.reshape(C, k).astype(np.float64))

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


@dataclass
class PyramidDecomposition:
    """Detail components ``tau_1..tau_K`` and the final approximation.

    ``downsampled`` keeps the conv inputs ``D_1..D_K`` from the forward pass so
    :func:`decompose_backward` can run; it is ``None`` for decompositions that
    were assembled by hand.
    """

    details: list
    final_approx: np.ndarray
    downsampled: list = field(default=None, repr=False)

    @property
    def n_scales(self):
        return len(self.details)

    @property
    def components(self):
        return [*self.details, self.final_approx]


def binomial_kernel(k):
    """Normalized binomial row of length ``k`` (``k`` odd)."""
    if k < 1 or k % 2 == 0:
        raise ConfigError(f"kernel size must be odd and >= 1, got {k}")
    row = comb(k - 1, np.arange(k), exact=False)
    return row / row.sum()


def init_params(n_channels, kernel_size=DEFAULT_KERNEL_SIZE, seed=None, jitter=INIT_JITTER):
    """Binomial low-pass kernels with small uniform jitter from ``seed``."""
    base = binomial_kernel(kernel_size)
    kernels = np.tile(base, (n_channels, 1))
    if jitter:
        rng = np.random.default_rng(seed)
        kernels += rng.uniform(-jitter, jitter, size=kernels.shape)
    return FilterParams(kernels)


def max_scales(T):
    """Largest ``K`` with ``T >= 2**K``."""
    if T < 2:
        return 0
    return int(math.floor(math.log2(T)))


def _check_scales(T, K):
    if K < 1:
        raise ConfigError(f"scale count K must be >= 1, got {K}")
    if T < 2 ** K:
        raise DegenerateInputError(
            f"series length {T} too short for K={K}; maximum admissible K is {max_scales(T)}"
        )


def resolve_scales(T, K):
    """Clamp ``K`` to what a length-``T`` series supports, warning if reduced."""
    k_max = max_scales(T)
    if k_max < 1:
        raise DegenerateInputError(f"series length {T} too short for any decomposition")
    if K > k_max:
        warnings.warn(f"K={K} infeasible for length {T}; using K={k_max}", stacklevel=2)
        return k_max
    return K


def _kernels_of(params):
    return params.kernels if isinstance(params, FilterParams) else check_kernels(params)


def decompose(x, params, K=DEFAULT_SCALES):
    x = check_series(x)
    w = check_kernels(_kernels_of(params), x.shape[-2])
    _check_scales(x.shape[-1], K)

    details, downsampled = [], []
    y = x
    for _ in range(K):
        d = downsample2(y)
        y_next = conv1d_same(d, w)
        details.append(y - upsample2(y_next, y.shape[-1]))
        downsampled.append(d)
        y = y_next
    return PyramidDecomposition(details, y, downsampled)


def reconstruct(p, params=None):
    """Invert :func:`decompose`.

    Only the up-sampling operator is needed, so ``params`` is ignored; it is
    accepted to mirror :func:`decompose`. This is not a denoiser: the kernels
    play no role here.
    """
    y = check_series(p.final_approx, "final_approx")
    for tau in reversed(p.details):
        tau = check_series(tau, "detail")
        if tau.shape[:-1] != y.shape[:-1]:
            raise ShapeError(f"component shapes disagree: {tau.shape} vs {y.shape}")
        try:
            y = tau + upsample2(y, tau.shape[-1])
        except ShapeError as exc:
            raise ShapeError(f"length chain broken: {exc}") from None
    return y


def decompose_backward(grad_details, grad_final, p, params):
    """Reverse-mode pass through :func:`decompose`.

    ``grad_details`` holds one gradient per detail component and
    ``grad_final`` the gradient of the final approximation. Returns
    ``(grad_x, grad_kernels)``; kernel gradients are summed over every level
    (and batch entry) that used them.
    """
    if p.downsampled is None:
        raise UsageError("decomposition has no saved forward intermediates")
    K = p.n_scales
    if len(grad_details) != K:
        raise ShapeError(f"expected {K} detail gradients, got {len(grad_details)}")
    w = _kernels_of(params)

    grad_w = np.zeros_like(w)
    # g_y walks up the chain: gradient w.r.t. Y_j, complete once level j+1 is done
    g_y = np.asarray(grad_final, dtype=np.float64).copy()
    if g_y.shape != p.final_approx.shape:
        raise ShapeError("grad_final shape does not match final approximation")
    for j in reversed(range(K)):
        g_tau = np.asarray(grad_details[j], dtype=np.float64)
        if g_tau.shape != p.details[j].shape:
            raise ShapeError(f"gradient for detail {j + 1} has wrong shape")
        d = p.downsampled[j]
        g_y = g_y - upsample2_adjoint(g_tau, d.shape[-1])
        g_d, g_w = conv1d_same_adjoint(g_y, d, w)
        grad_w += g_w
        g_y = g_tau + downsample2_adjoint(g_d, g_tau.shape[-1])
    return g_y, grad_w


class PerceptualFilter(TransformerMixin, BaseEstimator):
    """Estimator wrapper around the pyramid filter.

    ``fit`` only reads the channel count and initializes kernels;
    ``transform`` returns the list of ``K + 1`` components and
    ``inverse_transform`` reconstructs the signal from them.
    """

    def __init__(self, n_scales=DEFAULT_SCALES, kernel_size=DEFAULT_KERNEL_SIZE,
                 random_state=None, jitter=INIT_JITTER):
        self.n_scales = n_scales
        self.kernel_size = kernel_size
        self.random_state = random_state
        self.jitter = jitter

    def fit(self, X, y=None):
        X = check_series(X, "X")
        self.n_channels_ = X.shape[-2]
        self.params_ = init_params(self.n_channels_, self.kernel_size,
                                   self.random_state, self.jitter)
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        X = check_series(X, "X")
        K = resolve_scales(X.shape[-1], self.n_scales)
        return decompose(X, self.params_, K).components

    def inverse_transform(self, components):
        details, final = list(components[:-1]), components[-1]
        return reconstruct(PyramidDecomposition(details, final))
