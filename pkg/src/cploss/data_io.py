"""Dataset loading, normalization, windowing and a synthetic generator."""

import hashlib
import json
import logging
import math
import os
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view

from ._validation import DataError

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")

# ETT-small hourly protocol: 12 / 4 / 4 months of 30 days
_ETTH_BORDERS = (12 * 30 * 24, 4 * 30 * 24, 4 * 30 * 24)


@dataclass
class Dataset:
    """Raw series ``(C, T_total)`` with chronological splits and train-split stats.

    ``split_bounds`` maps split name to a half-open ``(start, stop)`` row range
    on the label level.
    """

    raw: np.ndarray
    channel_names: list
    split_bounds: dict
    mean: np.ndarray = None
    std: np.ndarray = None
    name: str = "dataset"
    content_hash: str = ""
    normalized: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.raw = np.asarray(self.raw, dtype=np.float64)
        if self.raw.ndim != 2:
            raise DataError(f"raw data must be (C, T), got {self.raw.shape}")
        if not np.all(np.isfinite(self.raw)):
            raise DataError("raw data contains NaN or Inf")
        start, stop = self.split_bounds["train"]
        train = self.raw[:, start:stop]
        if self.mean is None:
            self.mean = train.mean(axis=1)
        if self.std is None:
            self.std = train.std(axis=1)
        bad = [self.channel_names[c] for c in np.flatnonzero(~(self.std > 0))]
        if bad:
            raise DataError(f"constant channel(s) in train split: {', '.join(bad)}")
        self.normalized = self.normalize(self.raw)
        if not self.content_hash:
            self.content_hash = hashlib.sha256(self.raw.astype("<f8").tobytes()).hexdigest()

    @property
    def n_channels(self):
        return self.raw.shape[0]

    @property
    def n_rows(self):
        return self.raw.shape[1]

    def normalize(self, x):
        return (x - self.mean[:, None]) / self.std[:, None]

    def denormalize(self, z):
        return z * self.std[:, None] + self.mean[:, None]

    def norm_stats(self):
        return {
            "channels": list(self.channel_names),
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
        }

    def save_norm_stats(self, path):
        with open(path, "w") as fh:
            json.dump(self.norm_stats(), fh, indent=2)


def split_bounds_for(n_rows, name=""):
    """Standard chronological split for a file of ``n_rows`` rows."""
    base = os.path.basename(name).lower()
    if base.startswith("etth") or base.startswith("ettm"):
        scale = 4 if base.startswith("ettm") else 1
        n_train, n_val, n_test = (b * scale for b in _ETTH_BORDERS)
        if n_train + n_val + n_test > n_rows:
            raise DataError(f"{name}: {n_rows} rows, ETT protocol needs {n_train + n_val + n_test}")
    else:
        n_train = int(n_rows * 0.7)
        n_test = int(n_rows * 0.2)
        n_val = n_rows - n_train - n_test
    return {
        "train": (0, n_train),
        "val": (n_train, n_train + n_val),
        "test": (n_train + n_val, n_train + n_val + n_test),
    }


def load_csv(path, date_column_name="date", min_rows=None):
    """Read an ETT-style CSV: a timestamp column followed by numeric channels."""
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except FileNotFoundError:
        raise
    except (pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: {exc}") from None
    if frame.shape[1] < 2:
        raise DataError(f"{path}: need a timestamp column and at least one channel")
    if date_column_name in frame.columns:
        frame = frame.drop(columns=[date_column_name])
    else:
        frame = frame.iloc[:, 1:]

    values = np.empty((frame.shape[1], frame.shape[0]))
    for c, column in enumerate(frame.columns):
        parsed = pd.to_numeric(frame[column], errors="coerce").to_numpy(dtype=np.float64)
        bad = np.flatnonzero(~np.isfinite(parsed))
        if bad.size:
            row = int(bad[0])
            raise DataError(
                f"{path}: unparseable cell {frame[column].iloc[row]!r} at data row {row + 1}, "
                f"column {column!r}"
            )
        values[c] = parsed

    n_rows = values.shape[1]
    if min_rows is not None and n_rows < min_rows:
        raise DataError(f"{path}: {n_rows} rows, need at least {min_rows}")
    with open(path, "rb") as fh:
        digest = hashlib.sha256(fh.read()).hexdigest()
    return Dataset(values, list(frame.columns), split_bounds_for(n_rows, str(path)),
                   name=os.path.splitext(os.path.basename(str(path)))[0],
                   content_hash=digest)


@dataclass
class WindowSample:
    x: np.ndarray
    y: np.ndarray


class WindowSet(Sequence):
    """Sliding windows over one split; indexable as a sequence of ``WindowSample``.

    ``x`` and ``y`` expose the stacked ``(n, C, M)`` and ``(n, C, N)`` arrays
    (read-only views into the normalized data).
    """

    def __init__(self, x, y, starts):
        self.x = x
        self.y = y
        self.starts = starts

    def __len__(self):
        return len(self.starts)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return WindowSet(self.x[i], self.y[i], self.starts[i])
        return WindowSample(self.x[i], self.y[i])


def windows(ds, split, M, N, stride=1, strict_splits=False):
    """All windows whose target lies inside ``split``.

    Without ``strict_splits`` the lookback of val/test windows may reach back
    into the preceding split; labels never cross a split boundary.
    """
    if split not in SPLITS:
        raise ValueError(f"split must be one of {SPLITS}, got {split!r}")
    start, stop = ds.split_bounds[split]
    lo = start if strict_splits else max(0, start - M)
    data = ds.normalized[:, lo:stop]
    count = data.shape[1] - M - N + 1
    C = ds.n_channels
    if count < 1:
        log.warning("split %r too short for M=%d, N=%d; no windows", split, M, N)
        return WindowSet(np.empty((0, C, M)), np.empty((0, C, N)), np.empty(0, dtype=int))
    view = sliding_window_view(data, M + N, axis=1)[:, :count:stride]  # (C, n, M+N)
    view = view.transpose(1, 0, 2)
    starts = lo + np.arange(0, count, stride)
    return WindowSet(view[..., :M], view[..., M:], starts)


@dataclass
class SynthSpec:
    """Parameters of the heterogeneous synthetic generator.

    Channels cycle through three kinds: ``smooth`` (slow sinusoid, light
    Gaussian noise), ``volatile`` (fast sawtooth with Gaussian noise and sparse
    large spikes) and ``trend`` (slow drift plus gradually ramped level shifts).
    """

    smooth_period: float = 240.0
    smooth_noise: float = 0.02
    volatile_period: float = 12.0
    volatile_amplitude: float = 1.0
    volatile_noise: float = 0.1
    spike_rate: float = 0.03
    spike_scale: float = 2.5
    trend_slope: float = 0.0
    level_shift_rate: float = 1.0 / 500
    level_shift_scale: float = 0.25
    level_shift_ramp: int = 96
    trend_period: float = 96.0


CHANNEL_KINDS = ("smooth", "volatile", "trend")


def synth_heterogeneous(C, T, seed, spec=None):
    spec = spec or SynthSpec()
    rng = np.random.default_rng(seed)
    t = np.arange(T, dtype=np.float64)
    raw = np.empty((C, T))
    names = []
    for c in range(C):
        kind = CHANNEL_KINDS[c % len(CHANNEL_KINDS)]
        phase = rng.uniform(0, 2 * math.pi)
        if kind == "smooth":
            sig = np.sin(2 * math.pi * t / spec.smooth_period + phase)
            sig += spec.smooth_noise * rng.standard_normal(T)
        elif kind == "volatile":
            frac = (t / spec.volatile_period + phase / (2 * math.pi)) % 1.0
            sig = spec.volatile_amplitude * (2 * frac - 1)
            sig += spec.volatile_noise * rng.standard_normal(T)
            spikes = rng.random(T) < spec.spike_rate
            sig += spikes * rng.normal(0, spec.spike_scale, T)
        else:
            jumps = rng.random(T) < spec.level_shift_rate
            shifts = np.cumsum(jumps * rng.normal(0, spec.level_shift_scale, T))
            # ramp each shift in gradually so the channel stays low-frequency
            ramp = np.ones(spec.level_shift_ramp) / spec.level_shift_ramp
            shifts = np.convolve(np.pad(shifts, (spec.level_shift_ramp - 1, 0), mode="edge"),
                                 ramp, mode="valid")
            sig = spec.trend_slope * t + shifts
            sig += 0.3 * np.sin(2 * math.pi * t / spec.trend_period + phase)
            sig += 0.05 * rng.standard_normal(T)
        raw[c] = sig
        names.append(f"{kind}_{c}")
    return Dataset(raw, names, split_bounds_for(T), name=f"synthetic_C{C}_T{T}_s{seed}")
