"""Input validation helpers and the package's exception types."""

import numpy as np


class ShapeError(ValueError):
    """Array shapes are inconsistent with the operation."""


class ConfigError(ValueError):
    """Invalid hyperparameter or configuration value."""


class DegenerateInputError(ValueError):
    """Input too short (or otherwise degenerate) for the requested operation."""


class DataError(ValueError):
    """Dataset could not be parsed or is unusable."""


class UsageError(RuntimeError):
    """API called in the wrong order or without required state."""


def check_series(x, name="x", min_length=1):
    """Validate a channel series and return it as a float64 array.

    Accepts shape ``(C, T)`` or batched ``(..., C, T)``. All entries must be
    finite.
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim < 2:
        raise ShapeError(f"{name} must have shape (..., C, T), got {arr.shape}")
    if arr.shape[-2] < 1 or arr.shape[-1] < min_length:
        raise ShapeError(
            f"{name} needs C >= 1 and T >= {min_length}, got shape {arr.shape}"
        )
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    return arr


def check_kernels(kernels, n_channels=None):
    """Validate per-channel kernels of shape ``(C, k)`` with odd ``k``."""
    w = np.asarray(kernels, dtype=np.float64)
    if w.ndim != 2:
        raise ShapeError(f"kernels must have shape (C, k), got {w.shape}")
    if w.shape[1] < 1 or w.shape[1] % 2 == 0:
        raise ConfigError(f"kernel length must be odd and >= 1, got {w.shape[1]}")
    if n_channels is not None and w.shape[0] != n_channels:
        raise ShapeError(
            f"expected one kernel per channel ({n_channels}), got {w.shape[0]}"
        )
    return w


def check_same_shape(a, b, names=("a", "b")):
    if a.shape != b.shape:
        raise ShapeError(
            f"{names[0]} and {names[1]} shapes differ: {a.shape} vs {b.shape}"
        )
