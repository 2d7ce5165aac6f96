"""scikit-learn style forecaster trained with a selectable loss."""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import ShapeError, check_series
from .backbone import DEFAULT_MOVING_AVG
from .filter import DEFAULT_KERNEL_SIZE, DEFAULT_SCALES
from .train import TrainConfig, error_metrics, fit_windows, predict


class CPForecaster(BaseEstimator):
    """DLinear forecaster jointly trained with the channel-wise perceptual loss.

    ``X`` holds lookback windows ``(n, C, M)`` and ``y`` horizon windows
    ``(n, C, N)``. If no validation windows are passed, the last
    ``validation_fraction`` of the training windows (in order) is held out for
    early stopping.

    After fitting, ``model_`` is the trained :class:`ForecastModel`,
    ``filter_params_`` the learned kernels (``None`` unless ``loss="cp"``) and
    ``history_`` the per-epoch log.
    """

    def __init__(self, loss="cp", n_scales=DEFAULT_SCALES, kernel_size=DEFAULT_KERNEL_SIZE,
                 learning_rate=1e-3, batch_size=32, max_epochs=30, patience=5,
                 detach_target=False, filter_lr_multiplier=1.0, clip_norm=5.0,
                 shared_weights=False, decompose=True, moving_avg=DEFAULT_MOVING_AVG,
                 validation_fraction=0.1, random_state=0):
        self.loss = loss
        self.n_scales = n_scales
        self.kernel_size = kernel_size
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.detach_target = detach_target
        self.filter_lr_multiplier = filter_lr_multiplier
        self.clip_norm = clip_norm
        self.shared_weights = shared_weights
        self.decompose = decompose
        self.moving_avg = moving_avg
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _config(self):
        return TrainConfig(
            loss_kind=self.loss, K=self.n_scales, k=self.kernel_size,
            learning_rate=self.learning_rate, batch_size=self.batch_size,
            max_epochs=self.max_epochs, patience=self.patience,
            seed=0 if self.random_state is None else self.random_state,
            detach_target=self.detach_target, filter_lr_multiplier=self.filter_lr_multiplier,
            clip_norm=self.clip_norm, shared_weights=self.shared_weights,
            decompose=self.decompose, moving_avg=self.moving_avg,
        )

    @staticmethod
    def _check_xy(X, y):
        X = check_series(X, "X")
        y = check_series(y, "y")
        if X.ndim != 3 or y.ndim != 3 or X.shape[:2] != y.shape[:2]:
            raise ShapeError(f"expected X (n, C, M) and y (n, C, N), got {X.shape}, {y.shape}")
        return X, y

    def fit(self, X, y, X_val=None, y_val=None):
        X, y = self._check_xy(X, y)
        if X_val is None:
            n_val = max(1, int(round(len(X) * self.validation_fraction)))
            if n_val >= len(X):
                raise ValueError("not enough windows to hold out a validation set")
            X, X_val = X[:-n_val], X[-n_val:]
            y, y_val = y[:-n_val], y[-n_val:]
        else:
            X_val, y_val = self._check_xy(X_val, y_val)
        result = fit_windows(self._config(), X, y, X_val, y_val)
        self.model_ = result.model
        self.filter_params_ = result.filter_params
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        self.n_scales_ = result.K
        self.n_channels_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_series(X, "X")
        if X.ndim == 2:
            return self.model_.forward(X)
        return predict(self.model_, X)

    def score(self, X, y):
        """Negative test MSE (higher is better)."""
        check_is_fitted(self, "model_")
        X, y = self._check_xy(X, y)
        return -error_metrics(self.model_, X, y)["mse"]

    def evaluate(self, X, y):
        check_is_fitted(self, "model_")
        X, y = self._check_xy(X, y)
        return error_metrics(self.model_, X, y)
