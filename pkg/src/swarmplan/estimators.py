"""Scikit-learn style regressors wrapping the deep-set heuristic models.

``SteerRegressor`` maps local observations to admissible accelerations;
``DistanceRegressor`` maps them to non-negative cost-to-go estimates. Both
follow the estimator contract (``fit``/``predict``/``get_params``) so they
compose with sklearn tooling (cloning, grid search over the init params);
X is a sequence of ``Observation`` objects or a packed ``ObservationBatch``
rather than a rectangular matrix, as with text vectorizers.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from .deepset import DeepSetModel, ObservationBatch, make_model, train
from .nets import TrainConfig
from .world import Observation


def as_observation_batch(X) -> ObservationBatch:
    """Validate and pack estimator input into an ObservationBatch."""
    if isinstance(X, ObservationBatch):
        return X
    if hasattr(X, "batch") and isinstance(X.batch, ObservationBatch):  # SampleSet
        return X.batch
    X = list(X)
    if not X:
        raise ValueError("X is empty")
    for i, o in enumerate(X):
        if not isinstance(o, Observation):
            raise TypeError(f"X[{i}] is {type(o).__name__}, expected Observation")
    return ObservationBatch.from_observations(X)


def check_targets(y, n: int, dim: int) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.ndim == 1 and dim == 1:
        y = y[:, None]
    if y.shape != (n, dim):
        raise ValueError(f"y has shape {y.shape}, expected ({n}, {dim})")
    if not np.isfinite(y).all():
        raise ValueError("y contains non-finite values")
    return y


class _DeepSetRegressor(BaseEstimator, RegressorMixin):
    """Shared fit machinery; subclasses fix the head and output handling."""

    _head = ""

    def __init__(
        self,
        hidden_dim=64,
        embed_dim=16,
        learning_rate=1e-3,
        batch_size=4096,
        epochs=150,
        plateau_patience=10,
        plateau_factor=0.5,
        validation_fraction=0.1,
        random_state=0,
    ):
        self.hidden_dim = hidden_dim
        self.embed_dim = embed_dim
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.plateau_patience = plateau_patience
        self.plateau_factor = plateau_factor
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _make_model(self) -> DeepSetModel:
        raise NotImplementedError

    def fit(self, X, y):
        batch = as_observation_batch(X)
        model = self._make_model()
        y = check_targets(y, len(batch), model.out_dim)
        cfg = TrainConfig(
            initial_lr=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            plateau_patience=self.plateau_patience,
            plateau_factor=self.plateau_factor,
            seed=self.random_state,
            validation_fraction=self.validation_fraction,
        )
        self.model_, self.history_ = train(model, batch, y, cfg)
        self.n_iter_ = len(self.history_)
        return self

    def _predict_raw(self, X) -> np.ndarray:
        if not hasattr(self, "model_"):
            raise RuntimeError("estimator is not fitted")
        return self.model_.forward_batch(as_observation_batch(X))


class SteerRegressor(_DeepSetRegressor):
    """Imitates expert accelerations; outputs always lie in the control ball."""

    _head = "steer"

    def __init__(
        self,
        hidden_dim=64,
        embed_dim=16,
        u_max=0.5,
        goal_inputs="posvel",
        learning_rate=1e-3,
        batch_size=4096,
        epochs=150,
        plateau_patience=10,
        plateau_factor=0.5,
        validation_fraction=0.1,
        random_state=0,
    ):
        super().__init__(
            hidden_dim, embed_dim, learning_rate, batch_size, epochs,
            plateau_patience, plateau_factor, validation_fraction, random_state,
        )
        self.u_max = u_max
        self.goal_inputs = goal_inputs

    def _make_model(self) -> DeepSetModel:
        return make_model(
            "steer", seed=self.random_state, hidden=self.hidden_dim, embed=self.embed_dim,
            u_max=self.u_max, goal_inputs=self.goal_inputs,
        )

    def predict(self, X) -> np.ndarray:
        return self._predict_raw(X)


class DistanceRegressor(_DeepSetRegressor):
    """Predicts remaining control effort; outputs are non-negative."""

    _head = "distance"

    def __init__(
        self,
        hidden_dim=64,
        embed_dim=16,
        goal_inputs="posvel",
        learning_rate=1e-3,
        batch_size=4096,
        epochs=150,
        plateau_patience=10,
        plateau_factor=0.5,
        validation_fraction=0.1,
        random_state=0,
    ):
        super().__init__(
            hidden_dim, embed_dim, learning_rate, batch_size, epochs,
            plateau_patience, plateau_factor, validation_fraction, random_state,
        )
        self.goal_inputs = goal_inputs

    def _make_model(self) -> DeepSetModel:
        return make_model(
            "distance", seed=self.random_state, hidden=self.hidden_dim, embed=self.embed_dim,
            goal_inputs=self.goal_inputs,
        )

    def predict(self, X) -> np.ndarray:
        return self._predict_raw(X).ravel()
