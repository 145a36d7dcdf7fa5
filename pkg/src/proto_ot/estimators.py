"""Scikit-learn style estimators wrapping the functional core, so the
pipeline composes with the wider ecosystem (``get_params``, ``clone``,
``fit`` / ``predict`` / ``decision_function``).

All estimators l2-normalize their inputs, share the score convention
(higher = more bona fide) and predict 0 for bona fide, 1 for spoof.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .adapt import adapt_one_class, adapt_prototypes
from .features import FeatureSet
from .light import LightTrainConfig, fit_light
from .mixup import BarycenterConfig
from .ot import OTConfig
from .prototypes import TrainConfig, decision_scores, fit_prototype_bank


def _as_feature_set(X, y, domains=None, attacks=None) -> FeatureSet:
    X, y = check_X_y(X, y, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n = X.shape[0]
    norms = np.linalg.norm(X, axis=1)
    if np.any(norms == 0):
        raise ValueError("zero feature vectors cannot be normalized")
    X = X / norms[:, None]
    domains = list(domains) if domains is not None else ["d0"] * n
    if attacks is None:
        attacks = ["" if label == 0 else "attack" for label in y]
    return FeatureSet(
        X.shape[1], [f"r{i}" for i in range(n)], domains, y, list(attacks), X
    )


class PrototypeClassifier(BaseEstimator, ClassifierMixin):
    """Multi-centroid cosine classifier trained on source-domain features.

    Parameters mirror the training configuration; ``fit`` accepts
    optional per-sample ``domains`` and ``attacks`` tags that drive the
    fine-grained contrastive grouping.
    """

    def __init__(self, k=50, alpha=0.01, beta=0.01, eta=1.0, temperature=0.07,
                 scale=30.0, margin_init=0.5, learning_rate=0.01,
                 batch_size=128, epochs=30, view_sigma=0.05,
                 fine_grouping="domain_attack", seed=0):
        self.k = k
        self.alpha = alpha
        self.beta = beta
        self.eta = eta
        self.temperature = temperature
        self.scale = scale
        self.margin_init = margin_init
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.view_sigma = view_sigma
        self.fine_grouping = fine_grouping
        self.seed = seed

    def _config(self) -> TrainConfig:
        return TrainConfig(
            k=self.k, alpha=self.alpha, beta=self.beta, eta=self.eta,
            temperature=self.temperature, scale=self.scale,
            margin_init=self.margin_init, learning_rate=self.learning_rate,
            batch_size=self.batch_size, epochs=self.epochs, seed=self.seed,
            view_sigma=self.view_sigma, fine_grouping=self.fine_grouping,
        )

    def fit(self, X, y, domains=None, attacks=None):
        fset = _as_feature_set(X, y, domains, attacks)
        result = fit_prototype_bank([fset], self._config())
        self.bank_ = result.bank
        self.history_ = result.history
        self.classes_ = np.array([0, 1])
        return self

    def decision_function(self, X):
        check_is_fitted(self, "bank_")
        X = check_array(X, dtype=np.float64)
        return decision_scores(X, self.bank_)

    def predict(self, X):
        scores = self.decision_function(X)
        return np.where(scores > 1e-12, 0, 1)


class _BankScoringMixin:
    """predict/decision_function over a fitted prototype bank."""

    def decision_function(self, X):
        check_is_fitted(self, "adapted_")
        X = check_array(X, dtype=np.float64)
        return decision_scores(X, self.adapted_.bank)

    def predict(self, X):
        scores = self.decision_function(X)
        return np.where(scores > 1e-12, 0, 1)


class TransportAdapter(BaseEstimator, ClassifierMixin, _BankScoringMixin):
    """Training-free adapter: fit relocates the bank's centroids onto the
    few-shot support sample by class-wise regularized transport.

    With single-class support only that class is transported; the other
    class's centroids stay in place.
    """

    def __init__(self, bank=None, epsilon=0.01, lam=100.0, knn=3,
                 max_iter=1000, tol=1e-9, outer_iter=10):
        self.bank = bank
        self.epsilon = epsilon
        self.lam = lam
        self.knn = knn
        self.max_iter = max_iter
        self.tol = tol
        self.outer_iter = outer_iter

    def fit(self, X, y):
        if self.bank is None:
            raise ValueError("TransportAdapter needs a fitted PrototypeBank")
        support = _as_feature_set(X, y)
        config = OTConfig(epsilon=self.epsilon, lam=self.lam, knn=self.knn,
                          max_iter=self.max_iter, tol=self.tol,
                          outer_iter=self.outer_iter)
        n_bona, n_spoof = support.class_counts()
        if n_bona > 0 and n_spoof > 0:
            self.adapted_ = adapt_prototypes(self.bank, support, config)
        else:
            self.adapted_ = adapt_one_class(self.bank, support, config)
        self.classes_ = np.array([0, 1])
        return self


class LightweightAdapter(BaseEstimator, ClassifierMixin):
    """Lightweight-training adapter: fits a linear head on prototypes,
    support features and per-iteration synthetic mixup batches."""

    def __init__(self, bank=None, iterations=100, learning_rate=0.01,
                 epsilon=0.01, sigma=0.05, beta_a=0.4, beta_b=0.4,
                 use_mixup=True, perturb_support=True, seed=0):
        self.bank = bank
        self.iterations = iterations
        self.learning_rate = learning_rate
        self.epsilon = epsilon
        self.sigma = sigma
        self.beta_a = beta_a
        self.beta_b = beta_b
        self.use_mixup = use_mixup
        self.perturb_support = perturb_support
        self.seed = seed

    def fit(self, X, y):
        if self.bank is None:
            raise ValueError("LightweightAdapter needs a fitted PrototypeBank")
        support = _as_feature_set(X, y)
        config = LightTrainConfig(
            iterations=self.iterations, learning_rate=self.learning_rate,
            barycenter=BarycenterConfig(epsilon=self.epsilon, sigma=self.sigma,
                                        beta_a=self.beta_a, beta_b=self.beta_b,
                                        seed=self.seed),
            seed=self.seed, use_mixup=self.use_mixup,
            perturb_support=self.perturb_support,
        )
        result = fit_light(self.bank, support, config)
        self.classifier_ = result.classifier
        self.loss_history_ = result.loss_history
        self.classes_ = np.array([0, 1])
        return self

    def decision_function(self, X):
        check_is_fitted(self, "classifier_")
        X = check_array(X, dtype=np.float64)
        norms = np.linalg.norm(X, axis=1)
        if np.any(norms == 0):
            raise ValueError("zero feature vectors cannot be normalized")
        return self.classifier_.scores(X / norms[:, None])

    def predict(self, X):
        scores = self.decision_function(X)
        return np.where(scores > 0, 0, 1)
