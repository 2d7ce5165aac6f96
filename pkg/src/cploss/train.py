"""Joint training of the forecaster and the perceptual filter."""

import csv
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from ._validation import ConfigError, DataError
from .backbone import DEFAULT_MOVING_AVG, ForecastModel
from .filter import DEFAULT_KERNEL_SIZE, DEFAULT_SCALES, FilterParams, init_params, resolve_scales
from .losses import LOSSES, cp_loss, mae_loss, mse_loss
from .data_io import windows

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss becomes non-finite."""


@dataclass
class TrainConfig:
    loss_kind: str = "mse"
    K: int = DEFAULT_SCALES
    k: int = DEFAULT_KERNEL_SIZE
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 30
    patience: int = 5
    seed: int = 0
    detach_target: bool = False
    filter_lr_multiplier: float = 1.0
    clip_norm: float = 5.0  # 0 disables clipping
    shared_weights: bool = False
    decompose: bool = True
    moving_avg: int = DEFAULT_MOVING_AVG
    strict_splits: bool = False

    def __post_init__(self):
        if self.loss_kind not in LOSSES:
            raise ConfigError(f"loss_kind must be one of {LOSSES}, got {self.loss_kind!r}")
        if self.loss_kind == "cp" and self.K < 1:
            raise ConfigError("K must be >= 1 for the cp loss")
        if self.k < 1 or self.k % 2 == 0:
            raise ConfigError(f"kernel size k must be odd and >= 1, got {self.k}")
        for name in ("batch_size", "max_epochs", "patience"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.learning_rate < 0 or self.filter_lr_multiplier < 0 or self.clip_norm < 0:
            raise ConfigError("learning rates and clip_norm must be non-negative")

    def to_dict(self):
        return asdict(self)


@dataclass
class AdamState:
    """Moment estimates for a dict of parameter arrays."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def update(self, params, grads, lr_scale=None):
        """In-place Adam step; ``lr_scale`` maps parameter name to an lr multiplier."""
        self.step += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1 - b1 ** self.step
        bias2 = 1 - b2 ** self.step
        for name, p in params.items():
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            # in place with one scratch buffer; the model can hold ~1e6 weights
            tmp = np.multiply(g, 1 - b1)
            m *= b1
            m += tmp
            np.multiply(g, g, out=tmp)
            tmp *= 1 - b2
            v *= b2
            v += tmp
            lr = self.lr * (lr_scale.get(name, 1.0) if lr_scale else 1.0)
            # lr * m_hat / (sqrt(v_hat) + eps) with both bias corrections folded
            # into scalars
            np.sqrt(v, out=tmp)
            tmp += self.eps * np.sqrt(bias2)
            np.divide(m, tmp, out=tmp)
            tmp *= lr * np.sqrt(bias2) / bias1
            p -= tmp


@dataclass
class TrainResult:
    model: ForecastModel
    filter_params: FilterParams
    history: list
    best_epoch: int
    K: int


def clip_by_global_norm(grads, max_norm):
    norm = float(np.sqrt(sum(float(np.vdot(g, g)) for g in grads.values())))
    if max_norm and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def loss_and_grads(kind, pred, target, filter_params=None, K=None, detach_target=False):
    if kind == "mse":
        return mse_loss(pred, target)
    if kind == "mae":
        return mae_loss(pred, target)
    return cp_loss(pred, target, filter_params, K, detach_target=detach_target)


def predict(model, x, batch_size=256):
    x = np.asarray(x)
    out = np.empty((x.shape[0], model.n_channels, model.horizon))
    for i in range(0, x.shape[0], batch_size):
        out[i:i + batch_size] = model.forward(x[i:i + batch_size])
    return out


def error_metrics(model, x, y, batch_size=256):
    """Window-weighted MSE/MAE plus per-channel MAE, independent of ``batch_size``."""
    if len(x) == 0:
        raise DataError("cannot evaluate on an empty split")
    C = model.n_channels
    sq = np.zeros(C)
    ab = np.zeros(C)
    for i in range(0, len(x), batch_size):
        diff = model.forward(x[i:i + batch_size]) - y[i:i + batch_size]
        sq += (diff ** 2).sum(axis=(0, 2))
        ab += np.abs(diff).sum(axis=(0, 2))
    per_channel_count = len(x) * model.horizon
    return {
        "mse": float(sq.sum() / (C * per_channel_count)),
        "mae": float(ab.sum() / (C * per_channel_count)),
        "mae_per_channel": (ab / per_channel_count).tolist(),
        "mse_per_channel": (sq / per_channel_count).tolist(),
    }


def evaluate(model, dataset, split, M, N, strict_splits=False):
    ws = windows(dataset, split, M, N, strict_splits=strict_splits)
    return error_metrics(model, ws.x, ws.y)


def _param_norms(model, filter_params):
    norms = {k: float(np.linalg.norm(v)) for k, v in model.params.items()}
    if filter_params is not None:
        norms["filter"] = float(np.linalg.norm(filter_params.kernels))
    return norms


def fit_windows(config, train_x, train_y, val_x, val_y):
    """Train on pre-built window arrays ``(n, C, M)`` / ``(n, C, N)``."""
    n, C, M = train_x.shape
    N = train_y.shape[2]
    if n == 0:
        raise DataError("no training windows")
    if len(val_x) == 0:
        raise DataError("no validation windows")

    seeds = np.random.SeedSequence(config.seed).spawn(2)
    shuffle_rng = np.random.default_rng(seeds[0])
    model = ForecastModel(C, M, N, decompose=config.decompose,
                          shared_weights=config.shared_weights, moving_avg=config.moving_avg)
    use_cp = config.loss_kind == "cp"
    K = resolve_scales(N, config.K) if use_cp else config.K
    filter_params = init_params(C, config.k, seed=seeds[1]) if use_cp else None

    params = dict(model.params)
    grads = dict(model.grads)
    lr_scale = {}
    if use_cp:
        params["filter"] = filter_params.kernels
        grads["filter"] = filter_params.grad
        lr_scale["filter"] = config.filter_lr_multiplier
    adam = AdamState(lr=config.learning_rate)

    def snapshot():
        return model.copy(), (filter_params.copy() if use_cp else None)

    best_val = np.inf
    best = snapshot()
    best_epoch = 0
    stale = 0
    history = []
    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.permutation(n)
        total, seen = 0.0, 0
        for b, i in enumerate(range(0, n, config.batch_size)):
            idx = order[i:i + config.batch_size]
            xb, yb = train_x[idx], train_y[idx]
            pred = model.forward(xb)
            out = loss_and_grads(config.loss_kind, pred, yb, filter_params, K,
                                 config.detach_target)
            if not np.isfinite(out.value):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch {b}; "
                    f"parameter norms: {_param_norms(model, filter_params)}"
                )
            model.zero_grad()
            model.backward(xb, out.grad_pred)
            if use_cp:
                filter_params.grad[...] = out.grad_filter
            clip_by_global_norm(grads, config.clip_norm)
            adam.update(params, grads, lr_scale)
            total += out.value * len(idx)
            seen += len(idx)

        metrics = error_metrics(model, val_x, val_y)
        history.append({
            "epoch": epoch,
            "train_loss": total / seen,
            "val_mse": metrics["mse"],
            "val_mae": metrics["mae"],
            "lr": config.learning_rate,
        })
        log.debug("epoch %d train %.5f val_mse %.5f", epoch, total / seen, metrics["mse"])
        if metrics["mse"] < best_val:
            best_val = metrics["mse"]
            best = snapshot()
            best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break

    model, filter_params = best
    return TrainResult(model, filter_params, history, best_epoch, K)


def train(config, dataset, M, N):
    """Train on ``dataset``'s train split, selecting on validation MSE."""
    tr = windows(dataset, "train", M, N, strict_splits=config.strict_splits)
    va = windows(dataset, "val", M, N, strict_splits=config.strict_splits)
    if len(tr) == 0 or len(va) == 0:
        raise DataError(f"dataset splits too short for M={M}, N={N}")
    return fit_windows(config, tr.x, tr.y, va.x, va.y)


HISTORY_FIELDS = ("epoch", "train_loss", "val_mse", "val_mae", "lr")


def write_history(history, path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=HISTORY_FIELDS)
        writer.writeheader()
        for row in history:
            writer.writerow({k: repr(row[k]) if isinstance(row[k], float) else row[k]
                             for k in HISTORY_FIELDS})
