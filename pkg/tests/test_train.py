import csv

import numpy as np
import pytest

from cploss._validation import ConfigError
from cploss.backbone import ForecastModel
from cploss.data_io import Dataset, split_bounds_for, windows
from cploss.losses import mse_loss
from cploss.train import (
    AdamState,
    TrainConfig,
    TrainingDivergedError,
    clip_by_global_norm,
    evaluate,
    fit_windows,
    train,
    write_history,
)


def _dataset(raw, names=None):
    raw = np.atleast_2d(raw)
    names = names or [f"c{i}" for i in range(raw.shape[0])]
    return Dataset(raw, names, split_bounds_for(raw.shape[1]))


@pytest.fixture
def noisy_ds():
    rng = np.random.default_rng(3)
    t = np.arange(1200)
    raw = np.vstack([np.sin(t / 9.0) + 0.1 * rng.normal(size=t.size),
                     rng.normal(size=t.size).cumsum() * 0.1])
    return _dataset(raw)


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(loss_kind="huber")
    with pytest.raises(ConfigError):
        TrainConfig(loss_kind="cp", K=0)
    with pytest.raises(ConfigError):
        TrainConfig(k=4)
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)


def test_zero_lr_leaves_parameters(noisy_ds):
    cfg = TrainConfig(loss_kind="cp", K=2, learning_rate=0.0, max_epochs=4, patience=10)
    res = train(cfg, noisy_ds, 16, 8)
    fresh = ForecastModel(2, 16, 8)
    for name, value in res.model.params.items():
        np.testing.assert_array_equal(value, fresh.params[name])
    vals = [h["val_mse"] for h in res.history]
    assert len(vals) == 4 and len(set(vals)) == 1


def test_linear_recurrence_fit():
    # a sinusoid obeys x[t+1] = 2 cos(w) x[t] - x[t-1], so a linear map is exact
    t = np.arange(3000)
    ds = _dataset(np.sin(2 * np.pi * t / 23.0))
    tr = windows(ds, "train", 4, 4)
    # closed-form least squares on the raw window reaches ~0 residual
    A = np.hstack([tr.x[:, 0, :], np.ones((len(tr), 1))])
    coef, *_ = np.linalg.lstsq(A, tr.y[:, 0, :], rcond=None)
    assert np.mean((A @ coef - tr.y[:, 0, :]) ** 2) < 1e-20

    cfg = TrainConfig(loss_kind="mse", learning_rate=1e-2, max_epochs=30, patience=30,
                      decompose=False)
    res = train(cfg, ds, 4, 4)
    assert evaluate(res.model, ds, "test", 4, 4)["mse"] < 1e-3


def test_determinism(noisy_ds):
    cfg = TrainConfig(loss_kind="cp", K=3, max_epochs=3, seed=11)
    a = train(cfg, noisy_ds, 24, 16)
    b = train(cfg, noisy_ds, 24, 16)
    assert a.history == b.history
    assert a.model.to_bytes() == b.model.to_bytes()
    assert a.filter_params.to_bytes() == b.filter_params.to_bytes()


def test_small_step_decreases_loss():
    rng = np.random.default_rng(0)
    for _ in range(20):
        model = ForecastModel(3, 12, 6, moving_avg=5)
        for v in model.params.values():
            v[...] = rng.normal(size=v.shape) * 0.1
        x = rng.normal(size=(8, 3, 12))
        y = rng.normal(size=(8, 3, 6))
        before = mse_loss(model.forward(x), y)
        model.zero_grad()
        model.backward(x, before.grad_pred)
        AdamState(lr=1e-6).update(model.params, model.grads)
        assert mse_loss(model.forward(x), y).value < before.value


def test_cp_step_moves_filter(noisy_ds):
    tr = windows(noisy_ds, "train", 16, 16)
    va = windows(noisy_ds, "val", 16, 16)
    cfg = TrainConfig(loss_kind="cp", K=3, max_epochs=1, seed=0)
    from cploss.filter import init_params
    from numpy.random import SeedSequence

    start = init_params(2, 5, seed=SeedSequence(0).spawn(2)[1]).kernels
    res = fit_windows(cfg, tr.x[:32], tr.y[:32], va.x, va.y)
    assert np.linalg.norm(res.filter_params.kernels - start) > 0


@pytest.mark.filterwarnings("ignore:overflow encountered:RuntimeWarning")
def test_nan_loss_aborts():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(8, 1, 8)) * 1e170
    y = rng.normal(size=(8, 1, 4))
    cfg = TrainConfig(loss_kind="mse", max_epochs=1)
    with pytest.raises(TrainingDivergedError, match="epoch 1, batch 0"):
        fit_windows(cfg, x, y, x, y)


def test_clip_by_global_norm():
    grads = {"a": np.array([3.0, 0.0]), "b": np.array([[4.0]])}
    norm = clip_by_global_norm(grads, 1.0)
    assert norm == 5.0
    assert abs(np.sqrt(sum(np.sum(g ** 2) for g in grads.values())) - 1.0) < 1e-12


class TestEvaluate:
    def test_perfect_model(self):
        # period-8 signal: the next 8 steps repeat the last 8
        t = np.arange(800)
        ds = _dataset(np.sin(2 * np.pi * t / 8) + np.cos(2 * np.pi * t / 4))
        model = ForecastModel(1, 8, 8, decompose=False)
        model.params["weight"][...] = np.eye(8)
        m = evaluate(model, ds, "test", 8, 8)
        assert m["mse"] < 1e-24 and m["mae"] < 1e-12

    def test_zero_predictor_on_standardized(self):
        rng = np.random.default_rng(1)
        ds = _dataset(rng.normal(size=(2, 20000)) * [[3.0], [0.2]] + [[5.0], [-1.0]])
        model = ForecastModel(2, 16, 8, decompose=False)
        model.params["weight"][...] = 0.0
        assert abs(evaluate(model, ds, "train", 16, 8)["mse"] - 1.0) < 0.05

    def test_matches_naive_loop(self, noisy_ds):
        rng = np.random.default_rng(5)
        model = ForecastModel(2, 16, 8)
        for v in model.params.values():
            v[...] = rng.normal(size=v.shape) * 0.1
        m = evaluate(model, noisy_ds, "val", 16, 8)
        lo, hi = noisy_ds.split_bounds["val"]
        z = noisy_ds.normalized
        sq = ab = 0.0
        count = 0
        for s in range(lo - 16, hi - 16 - 8 + 1):
            pred = model.forward(z[:, s:s + 16])
            err = pred - z[:, s + 16:s + 24]
            sq += float(np.sum(err ** 2))
            ab += float(np.sum(np.abs(err)))
            count += err.size
        assert abs(m["mse"] - sq / count) < 1e-12
        assert abs(m["mae"] - ab / count) < 1e-12


def test_history_csv(tmp_path, noisy_ds):
    res = train(TrainConfig(max_epochs=2), noisy_ds, 16, 8)
    write_history(res.history, tmp_path / "h.csv")
    rows = list(csv.DictReader(open(tmp_path / "h.csv")))
    assert [r["epoch"] for r in rows] == ["1", "2"]
    assert set(rows[0]) == {"epoch", "train_loss", "val_mse", "val_mae", "lr"}
    assert float(rows[1]["val_mse"]) == res.history[1]["val_mse"]
