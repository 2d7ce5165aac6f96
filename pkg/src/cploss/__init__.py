"""Channel-wise perceptual loss for multi-channel time-series forecasting."""

from ._validation import (
    ConfigError,
    DataError,
    DegenerateInputError,
    ShapeError,
    UsageError,
)
from .backbone import ForecastModel
from .data_io import Dataset, load_csv, synth_heterogeneous, windows
from .estimator import CPForecaster
from .filter import (
    FilterParams,
    PerceptualFilter,
    PyramidDecomposition,
    decompose,
    decompose_backward,
    init_params,
    reconstruct,
)
from .losses import LossOutput, cp_loss, mae_loss, mse_loss
from .train import AdamState, TrainConfig, evaluate, train

__version__ = "0.1.0"
