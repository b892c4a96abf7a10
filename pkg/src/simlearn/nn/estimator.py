"""scikit-learn compatible wrappers around the GRU kernels."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted
from threadpoolctl import threadpool_limits

from ..exceptions import WrongVariant
from ..validation import check_binary_labels, check_sequences
from .layers import attention_forward
from .model import init_model, predict_proba, train


class GRUClassifier(ClassifierMixin, BaseEstimator):
    """GRU -> dropout -> dense softmax over variable-length state-action sequences.

    ``X`` is a list of ``(seq_len_i, f)`` arrays. Training runs single-threaded
    BLAS so a fixed ``random_state`` reproduces the weights bit for bit.
    """

    variant = "gru"

    def __init__(self, cells=32, dropout=0.02, epochs=30, learning_rate=1e-3, batch_size=16,
                 clip_norm=5.0, random_state=0):
        self.cells = cells
        self.dropout = dropout
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.clip_norm = clip_norm
        self.random_state = random_state

    def _init(self, f):
        return init_model(self.variant, f, self.cells, dropout_rate=self.dropout,
                          seed=self.random_state)

    def fit(self, X, y):
        X = check_sequences(X)
        y = check_binary_labels(y, len(X))
        self.n_features_in_ = X[0].shape[1]
        self.classes_ = np.array([0, 1])
        model = self._init(self.n_features_in_)
        with threadpool_limits(1):
            self.model_, self.loss_curve_ = train(
                model, X, y, epochs=self.epochs, lr=self.learning_rate,
                batch_size=self.batch_size, clip_norm=self.clip_norm,
                rng=np.random.default_rng([self.random_state, 1]),
            )
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        X = check_sequences(X, n_features=self.n_features_in_)
        with threadpool_limits(1):
            return predict_proba(self.model_, X)

    def decision_function(self, X):
        return self.predict_proba(X)[:, 1]

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(np.int64)


class SAGRUClassifier(GRUClassifier):
    """Additive self-attention over the raw features, concatenated with them, then the GRU head."""

    variant = "sa_gru"

    def __init__(self, cells=32, dropout=0.02, epochs=30, learning_rate=1e-3, batch_size=16,
                 clip_norm=5.0, attention_size=None, random_state=0):
        super().__init__(cells=cells, dropout=dropout, epochs=epochs, learning_rate=learning_rate,
                         batch_size=batch_size, clip_norm=clip_norm, random_state=random_state)
        self.attention_size = attention_size

    def _init(self, f):
        return init_model(self.variant, f, self.cells, attention_size=self.attention_size,
                          dropout_rate=self.dropout, seed=self.random_state)

    def attention_output(self, X):
        """Per-student context matrices ``(seq_len_i, f)`` from the attention layer."""
        return [c for c, _ in self._attend(X)]

    def attention_weights(self, X):
        return [w for _, w in self._attend(X)]

    def _attend(self, X):
        check_is_fitted(self, "model_")
        X = check_sequences(X, n_features=self.n_features_in_)
        out = []
        for M in X:
            C, alpha, _ = attention_forward(self.model_.attention, M)
            out.append((C, alpha))
        return out


def estimator_for(variant: str, **params) -> GRUClassifier:
    if variant in ("gru",):
        return GRUClassifier(**params)
    if variant in ("sa_gru", "sa-gru"):
        return SAGRUClassifier(**params)
    raise WrongVariant(f"no neural estimator for variant {variant!r}")


def from_model(model) -> GRUClassifier:
    """Wrap already-trained ``ModelParams`` (e.g. from a checkpoint) in an estimator."""
    est = estimator_for(model.variant, cells=model.cells, dropout=model.dropout_rate,
                        random_state=model.rng_seed)
    est.model_ = model
    est.n_features_in_ = model.f
    est.classes_ = np.array([0, 1])
    est.loss_curve_ = []
    return est
