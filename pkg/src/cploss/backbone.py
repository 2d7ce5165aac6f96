"""DLinear-style linear forecaster with hand-written backward pass.

The input window is split into a moving-average trend and a remainder; each
part goes through its own affine map from lookback ``M`` to horizon ``N``.
Weights are per channel by default, or one map shared by all channels.
"""

import struct

import numpy as np

from ._validation import ConfigError, DataError, ShapeError, check_series
from .core_math import conv1d_same, conv1d_same_adjoint

_MODEL_MAGIC = b"CPM1"
_MODEL_HEADER = struct.Struct("<4sIIIB")
FLAG_DECOMPOSE = 1
FLAG_SHARED = 2

DEFAULT_MOVING_AVG = 25


class ForecastModel:
    """Linear map ``(C, M) -> (C, N)`` applied to arrays of shape ``(B, C, M)``.

    ``params`` and ``grads`` are dicts of arrays keyed by name (``weight_trend``,
    ``bias_trend``, ``weight_remainder``, ``bias_remainder``; or ``weight`` and
    ``bias`` without decomposition).
    """

    def __init__(self, n_channels, lookback, horizon, decompose=True,
                 shared_weights=False, moving_avg=DEFAULT_MOVING_AVG):
        if min(n_channels, lookback, horizon) < 1:
            raise ConfigError("n_channels, lookback and horizon must be positive")
        if decompose and (moving_avg < 1 or moving_avg % 2 == 0):
            raise ConfigError(f"moving average window must be odd, got {moving_avg}")
        self.n_channels = n_channels
        self.lookback = lookback
        self.horizon = horizon
        self.decompose = decompose
        self.shared_weights = shared_weights
        self.moving_avg = moving_avg

        w_shape = (horizon, lookback) if shared_weights else (n_channels, horizon, lookback)
        b_shape = (horizon,) if shared_weights else (n_channels, horizon)
        # DLinear initializes every weight to 1/M (window mean)
        names = ("trend", "remainder") if decompose else (None,)
        self.params = {}
        for part in names:
            suffix = f"_{part}" if part else ""
            self.params["weight" + suffix] = np.full(w_shape, 1.0 / lookback)
            self.params["bias" + suffix] = np.zeros(b_shape)
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    @property
    def n_params(self):
        return sum(v.size for v in self.params.values())

    def zero_grad(self):
        for g in self.grads.values():
            g[...] = 0.0

    def copy(self):
        other = ForecastModel.__new__(ForecastModel)
        other.__dict__.update(self.__dict__)
        other.params = {k: v.copy() for k, v in self.params.items()}
        other.grads = {k: v.copy() for k, v in self.grads.items()}
        return other

    def _ma_kernels(self):
        return np.full((self.n_channels, self.moving_avg), 1.0 / self.moving_avg)

    def _affine(self, x, suffix):
        w = self.params["weight" + suffix]
        b = self.params["bias" + suffix]
        if self.shared_weights:
            return x @ w.T + b
        # one BLAS call per channel beats a stacked matmul over strided views
        out = np.empty(x.shape[:-1] + (w.shape[1],))
        for c in range(w.shape[0]):
            out[..., c, :] = x[..., c, :] @ w[c].T
        out += b
        return out

    def _affine_backward(self, x, g, suffix):
        w = self.params["weight" + suffix]
        if self.shared_weights:
            self.grads["weight" + suffix] += np.tensordot(g, x, axes=([0, 1], [0, 1]))
            self.grads["bias" + suffix] += g.sum(axis=(0, 1))
            return g @ w
        gc = g.transpose(1, 0, 2)
        self.grads["weight" + suffix] += np.matmul(gc.transpose(0, 2, 1), x.transpose(1, 0, 2))
        self.grads["bias" + suffix] += g.sum(axis=0)
        return np.matmul(gc, w).transpose(1, 0, 2)

    def _check_input(self, x):
        x = check_series(x)
        squeeze = x.ndim == 2
        if squeeze:
            x = x[None]
        if x.ndim != 3 or x.shape[1:] != (self.n_channels, self.lookback):
            raise ShapeError(
                f"expected input (B, {self.n_channels}, {self.lookback}), got {x.shape}"
            )
        return x, squeeze

    def forward(self, x):
        x, squeeze = self._check_input(x)
        if self.decompose:
            trend = conv1d_same(x, self._ma_kernels())
            out = self._affine(trend, "_trend") + self._affine(x - trend, "_remainder")
        else:
            out = self._affine(x, "")
        return out[0] if squeeze else out

    __call__ = forward

    def backward(self, x, grad_out):
        """Accumulate parameter gradients into ``self.grads``; return grad w.r.t. ``x``."""
        x, squeeze = self._check_input(x)
        g = np.asarray(grad_out, dtype=np.float64)
        if squeeze:
            g = g[None]
        if g.shape != x.shape[:2] + (self.horizon,):
            raise ShapeError(f"grad_out shape {g.shape} does not match output")
        if not self.decompose:
            grad_x = self._affine_backward(x, g, "")
        else:
            kernels = self._ma_kernels()
            trend = conv1d_same(x, kernels)
            g_trend = self._affine_backward(trend, g, "_trend")
            g_rem = self._affine_backward(x - trend, g, "_remainder")
            g_ma, _ = conv1d_same_adjoint(g_trend - g_rem, x, kernels)
            grad_x = g_rem + g_ma
        return grad_x[0] if squeeze else grad_x

    # checkpointing

    def _flags(self):
        return (FLAG_DECOMPOSE if self.decompose else 0) | (FLAG_SHARED if self.shared_weights else 0)

    def to_bytes(self):
        header = _MODEL_HEADER.pack(_MODEL_MAGIC, self.n_channels, self.lookback,
                                    self.horizon, self._flags())
        body = np.concatenate([v.ravel() for v in self.params.values()])
        return header + body.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, buf, moving_avg=DEFAULT_MOVING_AVG):
        if len(buf) < _MODEL_HEADER.size:
            raise DataError("model checkpoint truncated")
        magic, C, M, N, flags = _MODEL_HEADER.unpack_from(buf)
        if magic != _MODEL_MAGIC:
            raise DataError(f"bad model checkpoint magic {magic!r}")
        model = cls(C, M, N, decompose=bool(flags & FLAG_DECOMPOSE),
                    shared_weights=bool(flags & FLAG_SHARED), moving_avg=moving_avg)
        body = np.frombuffer(buf, dtype="<f8", offset=_MODEL_HEADER.size)
        if body.size != model.n_params:
            raise DataError(f"model checkpoint has {body.size} values, expected {model.n_params}")
        offset = 0
        for key, value in model.params.items():
            value[...] = body[offset:offset + value.size].reshape(value.shape)
            offset += value.size
        return model

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path, moving_avg=DEFAULT_MOVING_AVG):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read(), moving_avg)
