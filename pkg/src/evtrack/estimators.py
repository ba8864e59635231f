"""scikit-learn style wrappers around the tracking network.

These make the tracker compose with sklearn pipelines and model selection:
``PupilRegressor`` predicts the pupil center in ROI pixels from event
frames, ``PupilGridClassifier`` predicts the grid cell.  Frames are passed
as arrays of shape (n_samples, channels, height, width) or
(n_samples, height, width); labels for the regressor are (n_samples, 2)
ROI pixel coordinates.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, ClassifierMixin
from sklearn.exceptions import NotFittedError

from .network import (GridSpec, NetworkSpec, TrainConfig, TrainData,
                      canonical_spec, cell_to_center, forward, train)


def check_frames(X, input_shape) -> np.ndarray:
    """Validate and reshape frame input to (n, C, H, W) float32."""
    X = np.asarray(X)
    if X.ndim == 3:
        X = X[:, None, :, :]
    if X.ndim != 4:
        raise ValueError(f"expected 3-D or 4-D frame array, got shape {X.shape}")
    if tuple(X.shape[1:]) != tuple(input_shape):
        raise ValueError(f"frame shape {X.shape[1:]} does not match "
                         f"network input {tuple(input_shape)}")
    return X.astype(np.float32)


class _PupilBase(BaseEstimator):
    def __init__(self, fc1=64, epochs=30, batch_size=200, lr=1e-3, seed=0):
        self.fc1 = fc1
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.seed = seed

    _head = None

    def _fit(self, X, targets):
        self.spec_ = canonical_spec(self._head, fc1=self.fc1)
        X = check_frames(X, self.spec_.input_shape)
        config = TrainConfig(epochs=self.epochs, batch=self.batch_size,
                             lr=self.lr, seed=self.seed)
        data = TrainData(X, targets, np.zeros(len(X), dtype=np.int64))
        self.weights_, self.log_ = train(self.spec_, data, config)
        return self

    def _check_fitted(self):
        if not hasattr(self, "weights_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted yet")


class PupilRegressor(RegressorMixin, _PupilBase):
    """Predicts the pupil center in ROI pixel coordinates."""

    _head = "regression"

    def fit(self, X, y):
        y = np.asarray(y, dtype=np.float32)
        if y.ndim != 2 or y.shape[1] != 2:
            raise ValueError("y must have shape (n_samples, 2)")
        grid = GridSpec()
        targets = y / np.array([grid.roi_width, grid.roi_height], dtype=np.float32)
        return self._fit(X, targets)

    def predict(self, X):
        self._check_fitted()
        X = check_frames(X, self.spec_.input_shape)
        out = forward(self.spec_, self.weights_, X)
        grid = self.spec_.grid
        return out * np.array([grid.roi_width, grid.roi_height])


class PupilGridClassifier(ClassifierMixin, _PupilBase):
    """Predicts the 24x24 grid cell (plus the not-visible class)."""

    _head = "classification"

    def fit(self, X, y):
        y = np.asarray(y, dtype=np.int64)
        if y.ndim != 1:
            raise ValueError("y must be a 1-D array of class indices")
        self.classes_ = np.arange(GridSpec().n_classes)
        return self._fit(X, y)

    def decision_function(self, X):
        self._check_fitted()
        X = check_frames(X, self.spec_.input_shape)
        return forward(self.spec_, self.weights_, X)

    def predict(self, X):
        return np.argmax(self.decision_function(X), axis=1)

    def predict_center(self, X):
        """Grid-cell centers in ROI pixels; NaN rows for not-visible."""
        grid = self.spec_.grid
        out = np.full((len(X), 2), np.nan)
        for i, cls in enumerate(self.predict(X)):
            center = cell_to_center(int(cls), grid)
            if center is not None:
                out[i] = center
        return out
