import numpy as np
import pytest

from linksig.learners import (
    KNearestAverage,
    ModelKind,
    MultiLayerPerceptron,
    RidgeRegression,
    TrainingError,
    make_model,
)


def test_ridge_interpolates_exact_linear_map():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(40, 3))
    w = rng.normal(size=(3, 5))
    y = x @ w + 2.0
    model = RidgeRegression(alpha=0.0).fit(x, y)
    assert np.max(np.abs(model.predict(x) - y)) <= 1e-8


def test_ridge_shrinks_toward_mean():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(30, 2))
    y = x[:, :1] * 3
    strong = RidgeRegression(alpha=1e9).fit(x, y)
    np.testing.assert_allclose(strong.predict(x), y.mean(), atol=1e-6)


def test_ridge_singular_without_regularization_raises():
    x = np.ones((5, 2))
    x[:, 1] = np.arange(5)
    x[:, 0] = 2 * x[:, 1]
    with pytest.raises(TrainingError):
        RidgeRegression(alpha=0.0).fit(x, np.arange(5.0))
    RidgeRegression(alpha=0.1).fit(x, np.arange(5.0))


def test_knn_full_set_predicts_mean_label():
    rng = np.random.default_rng(2)
    x, y = rng.normal(size=(12, 2)), rng.normal(size=(12, 4))
    pred = KNearestAverage(k=12).fit(x, y).predict(rng.normal(size=(3, 2)))
    np.testing.assert_allclose(pred, np.tile(y.mean(axis=0), (3, 1)), atol=1e-12)


def test_knn_exact_match_with_one_neighbor():
    rng = np.random.default_rng(3)
    x, y = rng.normal(size=(10, 4)), rng.normal(size=(10, 50))
    pred = KNearestAverage(k=1).fit(x, y).predict(x[6:7])
    np.testing.assert_array_equal(pred[0], y[6])


def test_knn_rejects_bad_k():
    with pytest.raises(ValueError):
        KNearestAverage(0)


def _numeric_grad(model, params, z, t, w, eps=1e-5):
    out = {}
    for name, p in params.items():
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + eps
            up = model.loss_and_grad(params, z, t, w)[0]
            p[idx] = orig - eps
            down = model.loss_and_grad(params, z, t, w)[0]
            p[idx] = orig
            g[idx] = (up - down) / (2 * eps)
        out[name] = g
    return out


def test_mlp_gradient_matches_central_differences():
    rng = np.random.default_rng(4)
    model = MultiLayerPerceptron(width=6, weight_decay=0.01, seed=1)
    z, t = rng.normal(size=(5, 3)), rng.normal(size=(5, 4))
    w = np.array([1, 2, 1, 3, 1.0])
    params = model.init_params(3, 4)
    _, analytic = model.loss_and_grad(params, z, t, w)
    numeric = _numeric_grad(model, params, z, t, w)
    for name in params:
        rel = np.abs(analytic[name] - numeric[name]) / np.maximum(np.abs(analytic[name]) + np.abs(numeric[name]), 1e-8)
        assert rel.max() <= 1e-4, name


def test_mlp_is_deterministic_in_seed_and_fits_smooth_map():
    rng = np.random.default_rng(5)
    x = rng.uniform(-1, 1, (60, 2))
    y = np.stack([np.sin(2 * x[:, 0]), x[:, 1] ** 2], axis=1)
    a = MultiLayerPerceptron(seed=3, weight_decay=1e-5).fit(x, y)
    b = MultiLayerPerceptron(seed=3, weight_decay=1e-5).fit(x, y)
    np.testing.assert_array_equal(a.predict(x), b.predict(x))
    assert np.mean((a.predict(x) - y) ** 2) < 0.01 * np.var(y)


def test_mlp_duplicate_rows_equivalent_to_averaged_labels():
    x = np.array([[0.0], [0.0], [1.0]])
    y = np.array([[1.0], [3.0], [5.0]])
    merged = MultiLayerPerceptron(seed=0, epochs=50)
    merged.fit(x, y)
    assert np.isfinite(merged.final_loss)


def test_make_model_dispatch():
    assert isinstance(make_model("ridge"), RidgeRegression)
    assert make_model(ModelKind.KNN, {"k": 3}).k == 3
    m = make_model("mlp", {"width": 8}, seed=4)
    assert m.width == 8 and m.seed == 4 and m.weight_decay == 1e-2
    with pytest.raises(ValueError):
        make_model("svm")
