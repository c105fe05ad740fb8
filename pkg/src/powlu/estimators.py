"""scikit-learn wrappers so the activations and the gated network compose with pipelines."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted, validate_data

from .activations import DEFAULT_CLIP, DEFAULT_M, ActivationKind, self_forward
from .trainer import TrainConfig, TrainRun, build_network, fit_network


class ActivationTransformer(TransformerMixin, BaseEstimator):
    """Elementwise self-gated activation ``x * f(x)``.

    Stateless; ``fit`` only records the input width. With ``derivative=True``
    the transform returns the analytic derivative instead of the value.
    """

    def __init__(self, kind="powlu", m=DEFAULT_M, clip=DEFAULT_CLIP, derivative=False):
        self.kind = kind
        self.m = m
        self.clip = clip
        self.derivative = derivative

    def fit(self, X, y=None):
        validate_data(self, X)
        self.kind_ = ActivationKind.parse(self.kind, m=self.m, clip=self.clip)
        return self

    def transform(self, X):
        check_is_fitted(self, "kind_")
        X = validate_data(self, X, reset=False)
        value, deriv = self_forward(self.kind_, X)
        return deriv if self.derivative else value

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.requires_fit = False
        return tags


def _minibatches(X, y, batch_size, rng):
    n = X.shape[0]
    while True:
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            yield X[idx], y[idx]


class GluFfnRegressor(RegressorMixin, BaseEstimator):
    """Residual stack of gated FFN blocks trained with Adam on squared error.

    The hidden width equals the number of input features; a linear readout
    maps to the targets. ``max_iter`` counts mini-batch updates.

    Attributes
    ----------
    net_ : GluNetwork
    run_ : TrainRun
        Loss history and instrumentation logs of the fit.
    """

    def __init__(self, kind="powlu", m=DEFAULT_M, clip=DEFAULT_CLIP, n_blocks=2, d_ff=64, n_experts=0,
                 learning_rate=1e-3, batch_size=32, max_iter=500, record_every=10, random_state=0):
        self.kind = kind
        self.m = m
        self.clip = clip
        self.n_blocks = n_blocks
        self.d_ff = d_ff
        self.n_experts = n_experts
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_iter = max_iter
        self.record_every = record_every
        self.random_state = random_state

    def fit(self, X, y):
        X, y = validate_data(self, X, y, multi_output=True, y_numeric=True)
        y = np.asarray(y, dtype=np.float64)
        self._y_1d = y.ndim == 1
        Y = y.reshape(-1, 1) if self._y_1d else y
        seed = int(self.random_state) if self.random_state is not None else 0
        config = TrainConfig(
            seed=seed, n_blocks=self.n_blocks, hidden=X.shape[1], d_ff=self.d_ff, n_experts=self.n_experts,
            kind=self.kind, m=float(self.m), clip=float(self.clip), lr=float(self.learning_rate),
            batch=self.batch_size, steps=self.max_iter, record_every=self.record_every,
        )
        self.net_ = build_network(config, n_outputs=Y.shape[1])
        batches = _minibatches(X.astype(np.float64), Y, self.batch_size, np.random.default_rng([seed, 2]))
        self.run_: TrainRun = fit_network(self.net_, batches, config)
        self.loss_curve_ = [loss for _, loss, _ in self.run_.history]
        return self

    def predict(self, X):
        check_is_fitted(self, "net_")
        X = validate_data(self, X, reset=False)
        pred, _ = self.net_.forward(X.astype(np.float64))
        return pred.ravel() if self._y_1d else pred
