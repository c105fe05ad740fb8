import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from powlu.activations import POWLU, self_forward
from powlu.estimators import ActivationTransformer, GluFfnRegressor


def toy(n=400, d=4, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    y = np.sin(X[:, 0]) + 0.5 * X[:, 1] ** 2 - X[:, 2]
    return X, y


def test_transformer_values_and_derivative(rng):
    X = rng.normal(scale=3, size=(10, 3))
    value, deriv = self_forward(POWLU, X)
    np.testing.assert_array_equal(ActivationTransformer().fit_transform(X), value)
    np.testing.assert_array_equal(ActivationTransformer(derivative=True).fit(X).transform(X), deriv)


def test_transformer_validates():
    t = ActivationTransformer()
    with pytest.raises(NotFittedError):
        t.transform(np.zeros((2, 2)))
    t.fit(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        t.transform(np.zeros((2, 4)))
    with pytest.raises(ValueError):
        ActivationTransformer(kind="powlu", m=11).fit(np.zeros((2, 2)))


def test_transformer_params_round_trip():
    t = ActivationTransformer(kind="swiglu_clip", clip=3.0)
    assert t.get_params() == {"kind": "swiglu_clip", "m": 3.0, "clip": 3.0, "derivative": False}
    assert clone(t).get_params() == t.get_params()


def test_regressor_fits_toy_problem():
    X, y = toy()
    model = GluFfnRegressor(max_iter=400, d_ff=32).fit(X, y)
    assert model.predict(X).shape == (400,)
    assert model.score(X, y) > 0.8
    assert len(model.loss_curve_) == 401
    assert model.loss_curve_[-1] < model.loss_curve_[0]


def test_regressor_multi_output():
    X, y = toy()
    Y = np.column_stack([y, -y])
    model = GluFfnRegressor(max_iter=50).fit(X, Y)
    assert model.predict(X).shape == (400, 2)


def test_regressor_deterministic():
    X, y = toy()
    a = GluFfnRegressor(max_iter=30, n_experts=2).fit(X, y).predict(X)
    b = GluFfnRegressor(max_iter=30, n_experts=2).fit(X, y).predict(X)
    np.testing.assert_array_equal(a, b)


def test_regressor_in_pipeline():
    X, y = toy()
    pipe = make_pipeline(StandardScaler(), GluFfnRegressor(kind="swiglu", max_iter=100))
    pipe.fit(X, y)
    assert np.isfinite(pipe.predict(X)).all()
    assert clone(pipe).get_params()["gluffnregressor__kind"] == "swiglu"


def test_regressor_not_fitted():
    with pytest.raises(NotFittedError):
        GluFfnRegressor().predict(np.zeros((1, 2)))
