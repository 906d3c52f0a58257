"""scikit-learn style wrappers around the registration solvers.

``X`` holds source points (canonical / NOCS coordinates), ``y`` the matching
target points, and ``sample_weight`` the per-pair confidences.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import _check_sample_weight, check_array, check_is_fitted, check_X_y

from .alignment import fit_sa3_nocs, umeyama_se3, umeyama_sim3
from .transforms import AnisoSimilarity


def _check_points(X, name="X"):
    X = check_array(X, dtype=np.float64, ensure_min_samples=1)
    if X.shape[1] != 3:
        raise ValueError(f"{name} must have 3 columns, got {X.shape[1]}")
    return X


class _RegistrationBase(TransformerMixin, RegressorMixin, BaseEstimator):
    def _validate(self, X, y, sample_weight):
        X, y = check_X_y(X, y, dtype=np.float64, multi_output=True, y_numeric=True)
        if X.shape[1] != 3 or y.ndim != 2 or y.shape[1] != 3:
            raise ValueError("X and y must both be (n, 3)")
        w = _check_sample_weight(sample_weight, X, dtype=np.float64)
        return X, y, w

    def _store(self, res):
        tf = res.transform
        if isinstance(tf, AnisoSimilarity):
            self.rotation_, self.scale_, self.translation_ = tf.r, tf.scale, tf.t
        elif hasattr(tf, "s"):
            self.rotation_, self.scale_, self.translation_ = tf.r, np.full(3, tf.s), tf.t
        else:
            self.rotation_, self.scale_, self.translation_ = tf.r, np.ones(3), tf.t
        self.rmse_ = res.rmse
        self.n_iter_ = res.iterations
        self.n_features_in_ = 3
        return self

    @property
    def transform_(self) -> AnisoSimilarity:
        check_is_fitted(self, "rotation_")
        return AnisoSimilarity(self.rotation_, self.scale_, self.translation_)

    def predict(self, X):
        check_is_fitted(self, "rotation_")
        return self.transform_.apply(_check_points(X))

    def transform(self, X):
        return self.predict(X)

    def inverse_transform(self, X):
        check_is_fitted(self, "rotation_")
        return self.transform_.inverse_apply(_check_points(X))

    def score(self, X, y, sample_weight=None):
        """Negative weighted RMS residual (higher is better)."""
        X, y, w = self._validate(X, y, sample_weight)
        r2 = np.sum((self.predict(X) - y) ** 2, axis=1)
        return -float(np.sqrt(np.sum(w * r2) / np.sum(w)))


class UmeyamaRegistration(_RegistrationBase):
    """Closed-form rigid (``with_scale=False``) or similarity registration."""

    def __init__(self, with_scale: bool = True):
        self.with_scale = with_scale

    def fit(self, X, y, sample_weight=None):
        X, y, w = self._validate(X, y, sample_weight)
        solver = umeyama_sim3 if self.with_scale else umeyama_se3
        return self._store(solver(X, y, w))


class AnisotropicRegistration(_RegistrationBase):
    """Rotation, per-axis scale and translation by alternating minimisation."""

    def __init__(self, max_iter: int = 100, tol: float = 1e-12):
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, X, y, sample_weight=None):
        X, y, w = self._validate(X, y, sample_weight)
        res = fit_sa3_nocs(X, y, w, max_iter=self.max_iter, rel_tol=self.tol)
        self.objective_history_ = np.asarray(res.objective_history)
        return self._store(res)
