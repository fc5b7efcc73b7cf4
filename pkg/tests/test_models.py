import numpy as np
import pytest

from wallprofile import models
from wallprofile.evaluation import nmse
from wallprofile.models import (CNN_PARAMS, CRITIC_PARAMS, FCNN_PARAMS, InputError, TrainConfig,
                                TrainData, TrainedModel, TrainingError, build_network,
                                critic_specs, denormalize, load_model, predict, save_model, train)
from wallprofile.nn import Sequential
from wallprofile.scene import enumerate_cases, normalize_material, rasterize_labels
from wallprofile.signal import FeatureStats


def test_parameter_counts_by_summation():
    assert FCNN_PARAMS == 880 * 256 + 256 + 256 * 512 + 512 + 512 * 1024 + 1024 == 882_432
    assert build_network("fcnn", 0).n_params() == FCNN_PARAMS
    assert build_network("cnn", 0).n_params() == CNN_PARAMS == 29_374_272
    assert build_network("gan", 0).n_params() == CNN_PARAMS
    assert Sequential(critic_specs(), seed=0).n_params() == CRITIC_PARAMS == 78_145
    with pytest.raises(ValueError):
        build_network("rnn", 0)


def _toy(n=10, seed=0):
    """Features that determine binary wall masks (thickness-dependent)."""
    rng = np.random.default_rng(seed)
    cases = [c for c in enumerate_cases() if c.wall_type == 1][:: 315 // n][:n]
    Y = np.stack([(rasterize_labels(c)[0].pixels > 0).reshape(-1) for c in cases]).astype(np.float32)
    X = rng.normal(size=(n, 880)).astype(np.float32)
    return X, Y


def test_overfit_ten_samples():
    X, Y = _toy()
    m = train("fcnn", TrainData(X, Y), "dielectric", TrainConfig.for_arch("fcnn", epochs=2000, seed=1))
    assert m.record["train_loss"][-1] < 0.05
    pred = predict(m, X[3], standardized=True)
    assert nmse(Y[3].reshape(32, 32), pred) < 0.05


def test_constant_zero_labels():
    X, Y = _toy()
    m = train("fcnn", TrainData(X, np.zeros_like(Y)), "conductivity",
              TrainConfig.for_arch("fcnn", epochs=300, seed=2))
    assert m.record["train_loss"][-1] < 0.01
    assert predict(m, X, standardized=True).max() < 0.05


def test_loss_non_increasing_with_frozen_order():
    X, Y = _toy(32, seed=3)
    cfg = TrainConfig.for_arch("fcnn", epochs=25, lr=2e-5, seed=3, shuffle=False)
    m = train("fcnn", TrainData(X, Y, X, Y), "dielectric", cfg)
    full = np.array(m.record["val_loss"])  # full training set after every epoch
    assert np.all(np.diff(full) <= 1e-7)
    assert full[-1] < full[0]


def test_training_is_deterministic(tmp_path):
    X, Y = _toy()
    cfg = TrainConfig.for_arch("fcnn", epochs=5, seed=4)
    stats = FeatureStats(np.zeros(880), np.ones(880))
    a = train("fcnn", TrainData(X, Y), "dielectric", cfg, stats)
    b = train("fcnn", TrainData(X, Y), "dielectric", cfg, stats)
    save_model(a, tmp_path / "a")
    save_model(b, tmp_path / "b")
    assert (tmp_path / "a/weights.bin").read_bytes() == (tmp_path / "b/weights.bin").read_bytes()


def test_bad_labels_and_arch():
    X, Y = _toy()
    with pytest.raises(TrainingError):
        train("fcnn", TrainData(X, Y * 2), "dielectric", TrainConfig(epochs=1))
    with pytest.raises(ValueError):
        models.train_supervised("gan", TrainData(X, Y), "dielectric", TrainConfig(epochs=1))


def test_config_overrides():
    cfg = TrainConfig.for_arch("cnn", epochs=None, lr=3e-4)
    assert (cfg.epochs, cfg.lr, cfg.batch_size) == (100, 3e-4, 32)
    assert TrainConfig.for_arch("gan").epochs == 500


@pytest.fixture(scope="module")
def fcnn_model():
    X, Y = _toy()
    stats = FeatureStats.fit(X)
    Xs = ((X - stats.mean) / stats.scale).astype(np.float32)
    return train("fcnn", TrainData(Xs, Y), "dielectric", TrainConfig(epochs=3, seed=5), stats), X


def test_predict_shape_range_and_purity(fcnn_model):
    m, X = fcnn_model
    out = predict(m, X[0])
    assert out.shape == (32, 32) and out.min() >= 0 and out.max() <= 1
    assert np.array_equal(out, predict(m, X[0]))
    with pytest.raises(InputError):
        predict(m, np.zeros(879))


def test_predict_invariant_to_batch(fcnn_model):
    m, X = fcnn_model
    batch = predict(m, X)
    for i in range(len(X)):
        assert np.array_equal(batch[i], predict(m, X[i]))
    assert np.array_equal(predict(m, X[[4, 0, 7]])[1], batch[0])


def test_save_load_round_trip(fcnn_model, tmp_path):
    m, X = fcnn_model
    save_model(m, tmp_path / "m")
    back = load_model(tmp_path / "m")
    assert back.arch == "fcnn" and back.profile == "dielectric"
    assert np.array_equal(predict(back, X), predict(m, X))
    assert back.record["train_loss"] == m.record["train_loss"]


def test_denormalize():
    assert denormalize(1.0, "dielectric") == 8.0
    assert denormalize(0.0, "dielectric") == 1.0
    assert denormalize(0.0, "conductivity") == 0.0
    assert denormalize(1.0, "conductivity") == pytest.approx(1e-2)
    u = np.linspace(0.001, 1, 200)
    ue, us = normalize_material(denormalize(u, "dielectric"), denormalize(u, "conductivity"))
    assert np.abs(ue - u).max() < 1e-6 and np.abs(us - u).max() < 1e-6
    with pytest.raises(ValueError):
        denormalize(0.5, "permeability")


def test_gan_round_touches_each_network_once(monkeypatch):
    X, Y = _toy(8)
    calls = []
    real_step = models.adam_step

    def counting(params, grads, state):
        calls.append(len(params))
        return real_step(params, grads, state)

    monkeypatch.setattr(models, "adam_step", counting)
    cfg = TrainConfig.for_arch("gan", epochs=1, batch_size=8, seed=6)
    m = train("gan", TrainData(X, Y, X, Y), "conductivity", cfg)
    n_critic, n_gen = len(m.critic.params), len(m.net.params)
    assert calls == [n_critic, n_gen]
    rec = m.record
    assert all(len(rec[k]) == 1 and np.isfinite(rec[k][0])
               for k in ("g_adv", "g_rec", "c_real", "c_fake", "val_rec"))


def test_gan_output_ranges():
    X, Y = _toy(8)
    m = train("gan", TrainData(X, Y), "dielectric", TrainConfig.for_arch("gan", epochs=2, seed=7))
    raw = m.net.forward(X, record=False)
    assert raw.min() > -1 and raw.max() < 1
    d = m.critic.forward(raw.astype(np.float32), record=False)
    assert d.min() > 0 and d.max() < 1
    m.stats = FeatureStats(np.zeros(880), np.ones(880))
    out = predict(m, X)
    assert out.min() >= 0 and out.max() <= 1


def test_gan_literal_objective_mode(tmp_path):
    X, Y = _toy(8)
    m = train("gan", TrainData(X, Y), "dielectric",
              TrainConfig.for_arch("gan", epochs=1, seed=8, lambda_rec=0.0))
    assert m.lambda_rec == 0.0
    m.stats = FeatureStats(np.zeros(880), np.ones(880))
    save_model(m, tmp_path / "g")
    back = load_model(tmp_path / "g")
    assert back.critic is not None and back.config.lambda_rec == 0.0
    assert np.array_equal(predict(back, X), predict(m, X))


def test_trained_model_holds_one_profile():
    m = TrainedModel("fcnn", "dielectric", build_network("fcnn", 0), None, TrainConfig())
    assert m.profile in ("dielectric", "conductivity") and m.lambda_rec is None
