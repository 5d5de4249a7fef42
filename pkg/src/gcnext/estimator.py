"""scikit-learn style forecasters over (n, T, J, C) motion arrays.

``X`` holds histories ``(n, T_h, J, C)`` and ``y`` the matching futures
``(n, T_f, J, C)``. ``score`` returns negative MPJPE so that larger is better,
as scikit-learn model selection expects.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .config import RunConfig
from .data import MotionDataset, mpjpe, zero_velocity
from .model import build_model
from .tensor import ShapeError
from .training import policy_stats, train_loop


def check_motion(X, name: str = "X", joints: int | None = None, channels: int | None = None) -> np.ndarray:
    """Validate a (n, T, J, C) finite float array."""
    X = check_array(X, allow_nd=True, dtype=np.float64, ensure_2d=False, input_name=name)
    if X.ndim != 4:
        raise ShapeError(f"{name} must be (n_samples, frames, joints, channels), got shape {X.shape}")
    if joints is not None and X.shape[2] != joints:
        raise ShapeError(f"{name} has {X.shape[2]} joints, expected {joints}")
    if channels is not None and X.shape[3] != channels:
        raise ShapeError(f"{name} has {X.shape[3]} channels, expected {channels}")
    return X


def check_motion_pair(X, y):
    X = check_motion(X, "X")
    y = check_motion(y, "y", joints=X.shape[2], channels=X.shape[3])
    if len(X) != len(y):
        raise ValueError(f"X has {len(X)} samples but y has {len(y)}")
    return X, y


class GCNextForecaster(RegressorMixin, BaseEstimator):
    """Dynamic graph-convolution forecaster (or one of its static ablations via ``model``)."""

    def __init__(self, model="gcnext", layers=8, options=("st", "sc", "s", "c"), tied=False,
                 static_kind="sc", static_tied=True, residual=True, hidden=64, pooling="joints",
                 tau=1.0, anneal=False, iterations=5000, batch_size=32, lr_start=6e-4,
                 lr_drop_to=5e-6, lr_drop_at=4400, clip_norm=None, eval_every=250, random_state=0):
        self.model = model
        self.layers = layers
        self.options = options
        self.tied = tied
        self.static_kind = static_kind
        self.static_tied = static_tied
        self.residual = residual
        self.hidden = hidden
        self.pooling = pooling
        self.tau = tau
        self.anneal = anneal
        self.iterations = iterations
        self.batch_size = batch_size
        self.lr_start = lr_start
        self.lr_drop_to = lr_drop_to
        self.lr_drop_at = lr_drop_at
        self.clip_norm = clip_norm
        self.eval_every = eval_every
        self.random_state = random_state

    def _config(self, X, y) -> RunConfig:
        return RunConfig(
            model=self.model, layers=self.layers, options=tuple(self.options), tied=self.tied,
            static_kind=self.static_kind, static_tied=self.static_tied, residual=self.residual,
            hidden=self.hidden, pooling=self.pooling, tau=self.tau, anneal=self.anneal,
            t_hist=X.shape[1], t_fut=y.shape[1], joints=X.shape[2], channels=X.shape[3],
            lr_start=self.lr_start, lr_drop_to=self.lr_drop_to, lr_drop_at=self.lr_drop_at,
            batch_size=self.batch_size, iterations=self.iterations, clip_norm=self.clip_norm,
            eval_every=self.eval_every, seed=self.random_state,
        ).validate()

    def fit(self, X, y, X_val=None, y_val=None):
        X, y = check_motion_pair(X, y)
        cfg = self._config(X, y)
        train = MotionDataset(np.concatenate([X, y], axis=1), X.shape[1])
        val = None
        if X_val is not None:
            X_val, y_val = check_motion_pair(X_val, y_val)
            val = MotionDataset(np.concatenate([X_val, y_val], axis=1), X_val.shape[1])
        net = build_model(cfg, np.random.default_rng(cfg.seed))
        self.model_, self.metrics_ = train_loop(net, train, val, cfg)
        self.config_ = cfg
        self.n_joints_in_ = X.shape[2]
        return self

    def _check_X(self, X):
        check_is_fitted(self, "model_")
        X = check_motion(X, joints=self.n_joints_in_, channels=self.config_.channels)
        if X.shape[1] != self.config_.t_hist:
            raise ShapeError(f"expected {self.config_.t_hist} history frames, got {X.shape[1]}")
        return X

    def predict(self, X):
        X = self._check_X(X)
        return self.model_.predict(X)

    def predict_routes(self, X):
        """Candidate index chosen at every layer, shape (n, L)."""
        X = self._check_X(X)
        return self.model_.predict(X, return_routes=True)[1]

    def policy_stats(self, X, y):
        X, y = check_motion_pair(X, y)
        return policy_stats(self.model_, MotionDataset(np.concatenate([X, y], axis=1), X.shape[1]))

    def score(self, X, y, sample_weight=None):
        X, y = check_motion_pair(X, y)
        return -mpjpe(self.predict(X), y)


class ZeroVelocityForecaster(RegressorMixin, BaseEstimator):
    """Predicts every future frame as the last observed pose."""

    def fit(self, X, y):
        X, y = check_motion_pair(X, y)
        self.t_fut_ = y.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "t_fut_")
        return zero_velocity(check_motion(X), self.t_fut_)

    def score(self, X, y, sample_weight=None):
        X, y = check_motion_pair(X, y)
        return -mpjpe(self.predict(X), y)
