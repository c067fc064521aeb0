"""scikit-learn style wrappers around the networks, trainer and certifier."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import certify
from .network import build_linf, build_maxmin, build_sortnet, build_standard
from .training import TrainConfig, fit

ARCHITECTURES = ("sortnet", "standard", "maxmin", "linf")


def build_network(architecture, input_dim, n_classes, hidden=(128, 128), rho=0.3, activation="abs",
                  group_size=2, head_hidden=None, seed=0):
    if architecture == "sortnet":
        return build_sortnet(input_dim, hidden, n_classes, rho=rho, activation=activation, seed=seed,
                             head_hidden=head_hidden)
    if architecture == "standard":
        return build_standard(input_dim, hidden, n_classes, activation=activation, seed=seed)
    if architecture == "maxmin":
        return build_maxmin(input_dim, hidden, n_classes, group_size=group_size, seed=seed)
    if architecture == "linf":
        return build_linf(input_dim, hidden, n_classes, seed=seed)
    raise ValueError(f"unknown architecture {architecture!r}; choose from {ARCHITECTURES}")


class LipschitzClassifier(ClassifierMixin, BaseEstimator):
    """Certifiably robust classifier trained with the margin (or IBP) loss.

    Parameters mirror :class:`lipcert.training.TrainConfig` plus the
    architecture; ``eps`` is the target l_inf radius used by :meth:`certify`.
    """

    def __init__(self, architecture="sortnet", hidden=(128, 128), head_hidden=None, rho=0.3,
                 activation="abs", group_size=2, epochs=50, batch_size=512, lr=0.02, theta=0.6,
                 lambda0=0.1, eps=0.1, loss="margin", k_trunc=10, seed=0):
        self.architecture = architecture
        self.hidden = hidden
        self.head_hidden = head_hidden
        self.rho = rho
        self.activation = activation
        self.group_size = group_size
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.theta = theta
        self.lambda0 = lambda0
        self.eps = eps
        self.loss = loss
        self.k_trunc = k_trunc
        self.seed = seed

    def _config(self):
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size, lr=self.lr, theta=self.theta,
                           rho=self.rho, lambda0=self.lambda0, eps_test=self.eps, loss=self.loss,
                           k_trunc=self.k_trunc, seed=self.seed,
                           stochastic=self.architecture == "sortnet")

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_ = unique_labels(y)
        if self.classes_.size < 2:
            raise ValueError("need at least two classes")
        yi = np.searchsorted(self.classes_, y)
        self.n_features_in_ = X.shape[1]
        net = build_network(self.architecture, X.shape[1], self.classes_.size, self.hidden, self.rho,
                            self.activation, self.group_size, self.head_hidden, self.seed)
        self.network_, self.log_ = fit(net, X, yi, self._config())
        return self

    def decision_function(self, X):
        check_is_fitted(self, "network_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return self.network_(X, k_trunc=self.k_trunc)

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[certify.predict(scores)]

    def certified_radius(self, X):
        """Lipschitz-margin radius of each prediction (NaN-free only without an MLP head)."""
        check_is_fitted(self, "network_")
        if self.network_.head_split is not None:
            raise certify.UncertifiableError("radius is only defined for fully Lipschitz networks")
        return certify.certified_radius(self.decision_function(X), self.network_.lipschitz_bound)

    def certify(self, X, y, eps=None, **kw):
        check_is_fitted(self, "network_")
        X, y = check_X_y(X, y, dtype=np.float64)
        yi = np.searchsorted(self.classes_, y)
        return certify.evaluate(self.network_, X, yi, self.eps if eps is None else eps, k_trunc=self.k_trunc, **kw)


class NearestNeighborCertifier(ClassifierMixin, BaseEstimator):
    """l_inf nearest-neighbour classifier; scores are minus the distance to each class."""

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_ = unique_labels(y)
        if self.classes_.size < 2:
            raise ValueError("need at least two classes")
        self.X_ = X
        self.y_ = np.searchsorted(self.classes_, y)
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "X_")
        X = check_array(X, dtype=np.float64)
        return certify.nn_classifier(self.X_, self.y_, X)

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[certify.predict(scores)]

    def certified_radius(self, X):
        return certify.certified_radius(self.decision_function(X), 1.0)
