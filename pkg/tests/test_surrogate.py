import numpy as np
import pytest

from rtolab.nn import init_params
from rtolab.surrogate import RegressionReport, SurrogateConfig, SurrogateModel, train_surrogate


def _toy(dtype=np.float64):
    net = init_params([12, 10, 6, 1], ["relu", "relu", "linear"], 2, dtype)
    return SurrogateModel(net, 100.0, 20.0, (3, 4))


def test_predict_units():
    m = _toy()
    x = np.random.default_rng(0).uniform(size=(5, 12))
    assert np.allclose(m.predict(x), m.normalized(x) * 20 + 100)
    assert m.predict(x[0].reshape(3, 4)).shape == (1,)
    with pytest.raises(ValueError):
        m.predict(np.zeros((2, 11)))


def test_input_gradient_matches_fd(rng):
    m = _toy()
    x = rng.uniform(size=12)
    g = m.input_gradient(x)
    h = 1e-6
    for i in range(12):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        fd = (m.predict(xp)[0] - m.predict(xm)[0]) / (2 * h)
        assert g[i] == pytest.approx(fd, rel=1e-6, abs=1e-9)


def test_input_gradient_float32_path(rng):
    m64 = _toy()
    m32 = m64.astype(np.float32)
    x = rng.uniform(size=12)
    assert np.allclose(m32.input_gradient(x), m64.input_gradient(x), rtol=1e-3, atol=1e-4)


def test_model_validation():
    with pytest.raises(ValueError):
        SurrogateModel(init_params([4, 2], "linear", 0), 0, 1, (2, 2))
    with pytest.raises(ValueError):
        SurrogateModel(init_params([4, 1], "linear", 0), 0, 0, (2, 2))


def test_save_load(tmp_path, rng):
    m = _toy(np.float32)
    m.save(tmp_path)
    back = SurrogateModel.load(tmp_path)
    x = rng.uniform(size=(3, 12))
    assert np.array_equal(back.predict(x), m.predict(x))
    assert back.shape == (3, 4)


def test_regression_report():
    r = RegressionReport.compute([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert r.mse == 0 and r.r2 == pytest.approx(1.0) and r.pearson == pytest.approx(1.0)
    r = RegressionReport.compute([1.0, 2.0, 3.0], [3.0, 2.0, 1.0], ids=[7, 8, 9])
    assert r.pearson == pytest.approx(-1.0) and r.ids == [7, 8, 9]


def test_training_learns_simple_map(rng):
    x = rng.uniform(size=(200, 4, 4))
    y = 50 + 10 * x.reshape(200, -1)[:, :8].sum(axis=1)
    cfg = SurrogateConfig(epochs=150, batch_size=16, lr=3e-3, seed=0)
    model, report, history = train_surrogate(x[:160], y[:160], cfg, holdout=(x[160:], y[160:], list(range(40))))
    assert len(history) == 150
    assert history[-1]["train_mse"] < history[0]["train_mse"]
    assert report.pearson > 0.95
    again, _, _ = train_surrogate(x[:160], y[:160], cfg)
    assert np.array_equal(again.predict(x[160:]), model.predict(x[160:]))
